//! Trajectory files: one text file per subject plus raw image sidecars.
//!
//! ```text
//! # sonoskill trajectory v1
//! subject,id=1,age=19,gender=male,height=1.65e0,weight=4.9e1,bmi=1.79e1,class=underweight
//! demo,0
//! t,qw,qx,qy,qz,fx,fy,fz,tx,ty,tz[,v0..v39][,@images/s1_d0_f0.raw]
//! ```
//!
//! A frame record carries the timestamp and either 10 (control only) or 50
//! (full latent node) state values. Images are `224·224` bytes, row-major,
//! rescaled from `0..=255` to `[0, 1]` on load.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::types::{
    BmiClass, ControlVariable, Dataset, Demonstration, Features, Frame, Gender, GrayImage,
    Subject, SubjectMeta, CONTROL_DIM, FEATURE_DIM, IMAGE_SIDE, NODE_DIM,
};

pub const TRAJECTORY_HEADER: &str = "# sonoskill trajectory v1";
const IMAGE_DIR: &str = "images";
const EXTENSION: &str = "traj";

/// Decimal text with 17 significant digits, enough to round-trip any `f64`.
pub(crate) fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_num(tok: &str, location: &str) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(location, format!("`{tok}` is not a number")))
}

/// Writes `ds` into directory `dir`, one file per subject.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in &ds.subjects {
        let path = dir.join(format!("subject_{:03}.{EXTENSION}", s.meta.id));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        write_subject(&mut out, s, dir).map_err(|e| Error::io(&path, e))?;
        out.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn write_subject(out: &mut impl Write, s: &Subject, dir: &Path) -> std::io::Result<()> {
    let m = &s.meta;
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    writeln!(
        out,
        "subject,id={},age={},gender={},height={},weight={},bmi={},class={}",
        m.id,
        m.age,
        m.gender.as_str(),
        fmt_num(m.height),
        fmt_num(m.weight),
        fmt_num(m.bmi),
        m.bmi_class.as_str()
    )?;
    for (di, d) in s.demos.iter().enumerate() {
        writeln!(out, "demo,{di}")?;
        for (fi, f) in d.frames.iter().enumerate() {
            let mut rec = fmt_num(f.timestamp);
            for x in f.w.flatten() {
                rec.push(',');
                rec.push_str(&fmt_num(x));
            }
            if let Some(v) = &f.features {
                for x in v {
                    rec.push(',');
                    rec.push_str(&fmt_num(*x));
                }
            }
            if let Some(img) = &f.image {
                let rel = format!("{IMAGE_DIR}/s{}_d{di}_f{fi}.raw", m.id);
                write_image(img, &dir.join(&rel))?;
                rec.push_str(",@");
                rec.push_str(&rel);
            }
            writeln!(out, "{rec}")?;
        }
    }
    Ok(())
}

fn write_image(img: &GrayImage, path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    fs::write(path, bytes)
}

fn read_image(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != IMAGE_SIDE * IMAGE_SIDE {
        return Err(Error::schema(format!(
            "{}: image sidecar has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            IMAGE_SIDE * IMAGE_SIDE
        )));
    }
    let data = bytes.into_iter().map(|b| f64::from(b) / 255.0).collect();
    GrayImage::new(IMAGE_SIDE, IMAGE_SIDE, data)
}

/// Reads every `*.traj` file in `dir`, ordered by file name.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == EXTENSION))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::schema(format!("{}: no .{EXTENSION} files", dir.display())));
    }
    let mut subjects = Vec::with_capacity(files.len());
    for path in files {
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        subjects.push(read_subject(BufReader::new(file), &path, dir)?);
    }
    subjects.sort_by_key(|s| s.meta.id);
    let ds = Dataset { subjects };
    ds.validate()?;
    Ok(ds)
}

fn read_subject(reader: impl BufRead, path: &Path, base: &Path) -> Result<Subject> {
    let name = path.display().to_string();
    let mut meta: Option<SubjectMeta> = None;
    let mut demos: Vec<Demonstration> = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in reader.lines().enumerate() {
        let loc = format!("{name}:{}", lineno + 1);
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if lineno == 0 {
                if line != TRAJECTORY_HEADER {
                    return Err(Error::parse(loc, format!("unsupported header `{line}`")));
                }
                saw_header = true;
            }
            continue;
        }
        if !saw_header {
            return Err(Error::parse(loc, "missing trajectory header"));
        }
        if let Some(rest) = line.strip_prefix("subject,") {
            if meta.is_some() {
                return Err(Error::parse(loc, "duplicate subject record"));
            }
            meta = Some(parse_meta(rest, &loc)?);
        } else if let Some(rest) = line.strip_prefix("demo,") {
            if meta.is_none() {
                return Err(Error::parse(loc, "demo block before subject record"));
            }
            let idx: usize = rest
                .trim()
                .parse()
                .map_err(|_| Error::parse(&loc, "bad demo index"))?;
            if idx != demos.len() {
                return Err(Error::parse(loc, format!("expected demo {}, found {idx}", demos.len())));
            }
            demos.push(Demonstration::default());
        } else {
            let demo = demos
                .last_mut()
                .ok_or_else(|| Error::parse(&loc, "frame record outside a demo block"))?;
            demo.frames.push(parse_frame(line, &loc, base)?);
        }
    }
    let meta = meta.ok_or_else(|| Error::parse(name, "missing subject record"))?;
    Ok(Subject { meta, demos })
}

fn parse_meta(rest: &str, loc: &str) -> Result<SubjectMeta> {
    let mut fields = std::collections::HashMap::new();
    for kv in rest.split(',') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::parse(loc, format!("bad subject field `{kv}`")))?;
        fields.insert(k.trim(), v.trim());
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::parse(loc, format!("subject record lacks `{k}`")))
    };
    let id = get("id")?
        .parse()
        .map_err(|_| Error::parse(loc, "bad subject id"))?;
    let age = get("age")?
        .parse()
        .map_err(|_| Error::parse(loc, "bad age"))?;
    let gender =
        Gender::parse(get("gender")?).ok_or_else(|| Error::parse(loc, "gender must be male/female"))?;
    let bmi_class = BmiClass::parse(get("class")?)
        .ok_or_else(|| Error::parse(loc, "class must be underweight/normal/overweight"))?;
    Ok(SubjectMeta {
        id,
        age,
        gender,
        height: parse_num(get("height")?, loc)?,
        weight: parse_num(get("weight")?, loc)?,
        bmi: parse_num(get("bmi")?, loc)?,
        bmi_class,
    })
}

fn parse_frame(line: &str, loc: &str, base: &Path) -> Result<Frame> {
    let mut toks: Vec<&str> = line.split(',').map(str::trim).collect();
    let image_ref = match toks.last() {
        Some(t) if t.starts_with('@') => toks.pop().map(|t| &t[1..]),
        _ => None,
    };
    let nums = toks
        .iter()
        .map(|t| parse_num(t, loc))
        .collect::<Result<Vec<f64>>>()?;
    let state = nums.len().saturating_sub(1);
    if state != CONTROL_DIM && state != NODE_DIM {
        return Err(Error::schema(format!(
            "{loc}: frame record has a {state}-dim state, expected {CONTROL_DIM} (control) or {NODE_DIM} (node)"
        )));
    }
    let w = ControlVariable::unflatten(&nums[1..1 + CONTROL_DIM])
        .map_err(|e| Error::schema(format!("{loc}: {e}")))?;
    let features = if state == NODE_DIM {
        let mut v: Features = [0.0; FEATURE_DIM];
        v.copy_from_slice(&nums[1 + CONTROL_DIM..]);
        Some(v)
    } else {
        None
    };
    let image = match image_ref {
        Some(rel) => Some(Arc::new(read_image(&base.join(rel))?)),
        None => None,
    };
    Ok(Frame {
        timestamp: nums[0],
        image,
        features,
        w,
    })
}
