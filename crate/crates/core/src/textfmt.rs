//! Line-oriented text serialization shared by the model files.
//!
//! Every model document starts with a `# sonoskill <kind> v<N>` header,
//! followed by `key,field=value,...` records and numeric rows.

use crate::error::{Error, Result};
use crate::trajectory::{fmt_num, parse_num};

pub(crate) struct Writer {
    buf: String,
}

impl Writer {
    pub fn new(kind: &str, version: u32) -> Self {
        Writer {
            buf: format!("# sonoskill {kind} v{version}\n"),
        }
    }

    pub fn record(&mut self, key: &str, fields: &[(&str, String)]) {
        self.buf.push_str(key);
        for (k, v) in fields {
            self.buf.push(',');
            self.buf.push_str(k);
            self.buf.push('=');
            self.buf.push_str(v);
        }
        self.buf.push('\n');
    }

    pub fn row(&mut self, values: impl IntoIterator<Item = f64>) {
        let mut first = true;
        for v in values {
            if !first {
                self.buf.push(' ');
            }
            first = false;
            self.buf.push_str(&fmt_num(v));
        }
        self.buf.push('\n');
    }

    /// `rows` lines of `cols` values from a row-major accessor.
    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) {
        self.record(name, &[("rows", rows.to_string()), ("cols", cols.to_string())]);
        for r in 0..rows {
            self.row((0..cols).map(|c| at(r, c)));
        }
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    name: &'a str,
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

pub(crate) struct Record<'a> {
    pub location: String,
    fields: Vec<(&'a str, &'a str)>,
}

impl<'a> Record<'a> {
    pub fn get(&self, key: &str) -> Result<&'a str> {
        self.fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::parse(&self.location, format!("missing field `{key}`")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::parse(&self.location, format!("`{key}={v}` is not an integer")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::parse(&self.location, format!("`{key}={v}` is not an integer")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        parse_num(self.get(key)?, &self.location)
    }
}

impl<'a> Reader<'a> {
    pub fn new(name: &'a str, text: &'a str, kind: &str, version: u32) -> Result<Self> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let expected = format!("# sonoskill {kind} v{version}");
        match lines.first() {
            Some((_, h)) if *h == expected => {}
            Some((n, h)) => {
                return Err(Error::parse(
                    format!("{name}:{n}"),
                    format!("expected header `{expected}`, found `{h}`"),
                ))
            }
            None => return Err(Error::parse(name, "empty document")),
        }
        Ok(Reader {
            name,
            lines,
            pos: 1,
        })
    }

    fn next_line(&mut self) -> Result<(String, &'a str)> {
        let (n, l) = *self
            .lines
            .get(self.pos)
            .ok_or_else(|| Error::parse(self.name, "unexpected end of document"))?;
        self.pos += 1;
        Ok((format!("{}:{n}", self.name), l))
    }

    pub fn record(&mut self, key: &str) -> Result<Record<'a>> {
        let (location, line) = self.next_line()?;
        let mut parts = line.split(',');
        let head = parts.next().unwrap_or("");
        if head != key {
            return Err(Error::parse(location, format!("expected `{key}` record, found `{head}`")));
        }
        let mut fields = Vec::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::parse(&location, format!("bad field `{p}`")))?;
            fields.push((k.trim(), v.trim()));
        }
        Ok(Record { location, fields })
    }

    pub fn row(&mut self, expected: usize) -> Result<Vec<f64>> {
        let (location, line) = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|t| parse_num(t, &location))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != expected {
            return Err(Error::parse(
                location,
                format!("expected {expected} values, found {}", vals.len()),
            ));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(location, "non-finite value"));
        }
        Ok(vals)
    }

    /// Reads a named matrix block and checks its shape; returns row-major data.
    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let rec = self.record(name)?;
        let (r, c) = (rec.usize("rows")?, rec.usize("cols")?);
        if (r, c) != (rows, cols) {
            return Err(Error::schema(format!(
                "{}: `{name}` is {r}x{c}, expected {rows}x{cols}",
                rec.location
            )));
        }
        let mut out = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            out.extend(self.row(cols)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_and_shape_check() {
        let mut w = Writer::new("demo", 1);
        w.record("dims", &[("n", "2".into())]);
        w.matrix("m", 2, 3, |r, c| (r * 3 + c) as f64 / 7.0);
        let text = w.finish();
        let mut rd = Reader::new("t", &text, "demo", 1).unwrap();
        assert_eq!(rd.record("dims").unwrap().usize("n").unwrap(), 2);
        let m = rd.matrix("m", 2, 3).unwrap();
        assert_eq!(m, (0..6).map(|i| i as f64 / 7.0).collect::<Vec<_>>());

        let mut rd = Reader::new("t", &text, "demo", 1).unwrap();
        rd.record("dims").unwrap();
        assert!(rd.matrix("m", 3, 2).is_err());
        assert!(Reader::new("t", &text, "demo", 2).is_err());
    }
}
