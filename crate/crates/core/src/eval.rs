//! Error statistics, timing and report formats.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::quat::quat_angle_deg;
use crate::types::{wrench_errors, ControlVariable, Features, LatentNode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Gmm { sigma: f64 },
    Mc { samples: usize },
    /// Echoes the ground truth; used to check the harness.
    Oracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gmm { .. } => "gmm",
            Method::Mc { .. } => "mc",
            Method::Oracle => "oracle",
        }
    }

    /// Sigma level or sample count, as printed in reports.
    pub fn param(&self) -> String {
        match self {
            Method::Gmm { sigma } => format!("{sigma}"),
            Method::Mc { samples } => samples.to_string(),
            Method::Oracle => "-".into(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Method::Gmm { sigma } => format!("GMM({sigma}σ)"),
            Method::Mc { samples } => format!("MC@{samples}"),
            Method::Oracle => "oracle".into(),
        }
    }

    fn parse(name: &str, param: &str) -> Option<Self> {
        match name {
            "gmm" => param.parse().ok().map(|sigma| Method::Gmm { sigma }),
            "mc" => param.parse().ok().map(|samples| Method::Mc { samples }),
            "oracle" => Some(Method::Oracle),
            _ => None,
        }
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        if xs.is_empty() {
            return Stat::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub pose: f64,
    pub force: f64,
    pub torque: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: Method,
    pub task: String,
    pub frames: usize,
    pub pose: Stat,
    pub force: Stat,
    pub torque: Stat,
    pub fps: f64,
    /// Fraction of frames whose raw prediction was stable (GMM only).
    pub stable_rate: Option<f64>,
    pub records: Vec<FrameRecord>,
}

/// One prediction and, for mixture methods, whether it was stable.
pub type Prediction = (ControlVariable, Option<bool>);

/// Runs `predict` over every test node and scores it against the node's own
/// control. Only the time spent inside `predict` counts toward FPS.
pub fn evaluate<F>(method: Method, task: &str, test: &[LatentNode], mut predict: F) -> Result<EvalReport>
where
    F: FnMut(usize, &Features) -> Result<Prediction>,
{
    if test.is_empty() {
        return Err(Error::invalid("evaluation needs at least one test frame"));
    }
    let mut spent = Duration::ZERO;
    let mut records = Vec::with_capacity(test.len());
    let mut stable = 0usize;
    let mut flagged = 0usize;
    for (i, node) in test.iter().enumerate() {
        let start = Instant::now();
        let (pred, st) = predict(i, &node.v)?;
        spent += start.elapsed();
        if let Some(s) = st {
            flagged += 1;
            stable += s as usize;
        }
        let pose = quat_angle_deg(&pred.p, &node.w.p)?;
        let (force, torque) = wrench_errors(&pred.f, &node.w.f)?;
        records.push(FrameRecord { frame: i, pose, force, torque });
    }
    Ok(summarize(method, task, records, spent, (flagged > 0).then(|| stable as f64 / flagged as f64)))
}

fn summarize(method: Method, task: &str, records: Vec<FrameRecord>, spent: Duration, stable_rate: Option<f64>) -> EvalReport {
    let col = |f: fn(&FrameRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let secs = spent.as_secs_f64().max(1e-9);
    EvalReport {
        method,
        task: task.to_string(),
        frames: records.len(),
        pose: Stat::of(&col(|r| r.pose)),
        force: Stat::of(&col(|r| r.force)),
        torque: Stat::of(&col(|r| r.torque)),
        fps: records.len() as f64 / secs,
        stable_rate,
        records,
    }
}

const HEADER: &str = "task,method,param,frames,pose_mean,pose_std,force_mean,force_std,torque_mean,torque_std,stable_rate,fps";

fn error_fields(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.task,
        r.method.name(),
        r.method.param(),
        r.frames,
        r.pose.mean,
        r.pose.std,
        r.force.mean,
        r.force.std,
        r.torque.mean,
        r.torque.std,
        r.stable_rate.map(|s| s.to_string()).unwrap_or_default()
    )
}

/// Full table, FPS in the last column. Values use shortest round-trip
/// formatting, so the table parses back exactly.
pub fn to_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{HEADER}\n");
    for r in reports {
        let _ = writeln!(out, "{},{}", error_fields(r), r.fps);
    }
    out
}

/// The table without the FPS column; identical across reruns with the same seeds.
pub fn error_table(reports: &[EvalReport]) -> String {
    let mut out = format!("{}\n", HEADER.trim_end_matches(",fps"));
    for r in reports {
        let _ = writeln!(out, "{}", error_fields(r));
    }
    out
}

pub fn from_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(Error::parse("results.csv:1", "unexpected header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("results.csv:{}", i + 1);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::parse(&loc, format!("expected 12 fields, found {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::parse(&loc, format!("bad number `{s}`"))) };
        let method = Method::parse(f[1], f[2]).ok_or_else(|| Error::parse(&loc, format!("bad method `{},{}`", f[1], f[2])))?;
        out.push(EvalReport {
            method,
            task: f[0].to_string(),
            frames: f[3].parse().map_err(|_| Error::parse(&loc, "bad frame count"))?,
            pose: Stat { mean: num(f[4])?, std: num(f[5])? },
            force: Stat { mean: num(f[6])?, std: num(f[7])? },
            torque: Stat { mean: num(f[8])?, std: num(f[9])? },
            stable_rate: if f[10].is_empty() { None } else { Some(num(f[10])?) },
            fps: num(f[11])?,
            records: Vec::new(),
        });
    }
    Ok(out)
}

/// Per-frame errors as `frame,pose,force,torque` lines for plotting.
pub fn records_csv(r: &EvalReport) -> String {
    let mut out = String::from("frame,pose_error,force_error,torque_error\n");
    for x in &r.records {
        let _ = writeln!(out, "{},{},{},{}", x.frame, x.pose, x.force, x.torque);
    }
    out
}

pub fn summary(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let mut task = "";
    for r in reports {
        if r.task != task {
            task = &r.task;
            let _ = writeln!(out, "== {task} ({} test frames)", r.frames);
        }
        let stable = r.stable_rate.map(|s| format!("  stable {:5.1}%", 100.0 * s)).unwrap_or_default();
        let _ = writeln!(
            out,
            "  {:<10} pose {:7.3} ± {:7.3} deg  force {:6.3} ± {:6.3} N  torque {:6.4} ± {:6.4} Nm  fps {:10.1}{stable}",
            r.method.label(),
            r.pose.mean,
            r.pose.std,
            r.force.mean,
            r.force.std,
            r.torque.mean,
            r.torque.std,
            r.fps
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::Quaternion;
    use crate::types::{Wrench, FEATURE_DIM};

    fn nodes(n: usize) -> Vec<LatentNode> {
        (0..n)
            .map(|i| {
                let q = Quaternion::from_axis_angle([0.0, 1.0, 0.0], i as f64).unwrap();
                let w = ControlVariable {
                    p: q,
                    f: Wrench::new([0.0, 0.0, i as f64], [0.01 * i as f64, 0.0, 0.0]).unwrap(),
                };
                LatentNode::new([i as f64; FEATURE_DIM], w).unwrap()
            })
            .collect()
    }

    #[test]
    fn oracle_has_zero_error() {
        let test = nodes(20);
        let r = evaluate(Method::Oracle, "t", &test, |i, _| Ok((test[i].w, None))).unwrap();
        assert_eq!(r.pose, Stat::default());
        assert_eq!(r.force, Stat::default());
        assert_eq!(r.torque, Stat::default());
        assert_eq!(r.frames, 20);
        assert!(r.fps > 0.0);
        assert_eq!(r.stable_rate, None);
    }

    #[test]
    fn constant_prediction_errors() {
        let test = nodes(10);
        let fixed = ControlVariable::default();
        let r = evaluate(Method::Gmm { sigma: 3.0 }, "t", &test, |i, _| Ok((fixed, Some(i % 2 == 0)))).unwrap();
        let forces: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!((r.force.mean - 4.5).abs() < 1e-12);
        assert!((r.force.std - Stat::of(&forces).std).abs() < 1e-12);
        assert!((r.pose.mean - 4.5).abs() < 1e-9);
        assert_eq!(r.stable_rate, Some(0.5));
    }

    #[test]
    fn population_std_and_order_invariance() {
        let s = Stat::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.std, 2.0);
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut rev = xs.clone();
        rev.reverse();
        let (a, b) = (Stat::of(&xs), Stat::of(&rev));
        assert!((a.mean - b.mean).abs() < 1e-12 && (a.std - b.std).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_and_error_table() {
        let test = nodes(5);
        let fixed = ControlVariable::default();
        let a = evaluate(Method::Gmm { sigma: 2.0 }, "intra", &test, |_, _| Ok((fixed, Some(true)))).unwrap();
        let b = evaluate(Method::Mc { samples: 500 }, "intra", &test, |_, _| Ok((fixed, None))).unwrap();
        let reports = vec![a, b];
        let back = from_csv(&to_csv(&reports)).unwrap();
        for (x, y) in reports.iter().zip(&back) {
            assert_eq!(
                EvalReport {
                    records: vec![],
                    ..x.clone()
                },
                *y
            );
        }
        let table = error_table(&reports);
        assert!(!table.contains("fps"));
        assert_eq!(table.lines().count(), 3);
        assert!(summary(&reports).contains("MC@500"));
        assert_eq!(records_csv(&reports[0]).lines().count(), 6);
        assert!(from_csv("nope\n").is_err());
    }

    #[test]
    fn empty_test_set_is_rejected() {
        assert!(evaluate(Method::Oracle, "t", &[], |_, _| Ok((ControlVariable::default(), None))).is_err());
    }
}
