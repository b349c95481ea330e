//! Domain types shared by every stage: control variables, latent nodes,
//! frames, subjects and datasets.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quat::Quaternion;

/// Image-feature width of a latent node.
pub const FEATURE_DIM: usize = 40;
/// Control-variable width: quaternion (4) plus wrench (6).
pub const CONTROL_DIM: usize = 10;
/// Full latent-node width.
pub const NODE_DIM: usize = FEATURE_DIM + CONTROL_DIM;
/// Side length of a preprocessed image.
pub const IMAGE_SIDE: usize = 224;

pub type Features = [f64; FEATURE_DIM];

/// Contact force (N) and torque (Nm) at the probe tip.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

impl Wrench {
    pub fn new(force: [f64; 3], torque: [f64; 3]) -> Result<Self> {
        if force.iter().chain(torque.iter()).all(|v| v.is_finite()) {
            Ok(Wrench { force, torque })
        } else {
            Err(Error::invalid("non-finite wrench component"))
        }
    }
}

fn norm3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean force error (N) and torque error (Nm).
pub fn wrench_errors(pred: &Wrench, truth: &Wrench) -> Result<(f64, f64)> {
    let f = norm3(pred.force, truth.force);
    let t = norm3(pred.torque, truth.torque);
    if f.is_finite() && t.is_finite() {
        Ok((f, t))
    } else {
        Err(Error::invalid("non-finite wrench in error computation"))
    }
}

/// The robot-controlled part of a state: probe orientation and contact wrench.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlVariable {
    pub p: Quaternion,
    pub f: Wrench,
}

impl ControlVariable {
    /// `[qw, qx, qy, qz, fx, fy, fz, tx, ty, tz]`.
    pub fn flatten(&self) -> [f64; CONTROL_DIM] {
        let q = self.p.to_array();
        let (f, t) = (self.f.force, self.f.torque);
        [q[0], q[1], q[2], q[3], f[0], f[1], f[2], t[0], t[1], t[2]]
    }

    /// Inverse of [`flatten`](Self::flatten); the quaternion part is normalized.
    pub fn unflatten(w: &[f64]) -> Result<Self> {
        Self::unflatten_with_norm(w).map(|(c, _)| c)
    }

    /// Like [`unflatten`](Self::unflatten) but also reports the raw norm of
    /// the quaternion part.
    pub fn unflatten_with_norm(w: &[f64]) -> Result<(Self, f64)> {
        if w.len() != CONTROL_DIM {
            return Err(Error::invalid(format!(
                "control variable needs {CONTROL_DIM} values, got {}",
                w.len()
            )));
        }
        let (p, norm) = Quaternion::normalized_with_norm([w[0], w[1], w[2], w[3]])?;
        let f = Wrench::new([w[4], w[5], w[6]], [w[7], w[8], w[9]])?;
        Ok((ControlVariable { p, f }, norm))
    }
}

/// A state embedded in latent space: `[v | p | f]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentNode {
    pub v: Features,
    pub w: ControlVariable,
}

impl LatentNode {
    pub fn new(v: Features, w: ControlVariable) -> Result<Self> {
        if v.iter().all(|x| x.is_finite()) {
            Ok(LatentNode { v, w })
        } else {
            Err(Error::invalid("non-finite feature value"))
        }
    }

    pub fn to_array(&self) -> [f64; NODE_DIM] {
        let mut out = [0.0; NODE_DIM];
        out[..FEATURE_DIM].copy_from_slice(&self.v);
        out[FEATURE_DIM..].copy_from_slice(&self.w.flatten());
        out
    }

    pub fn from_slice(d: &[f64]) -> Result<Self> {
        if d.len() != NODE_DIM {
            return Err(Error::schema(format!(
                "latent node must have {NODE_DIM} dimensions, got {}",
                d.len()
            )));
        }
        let mut v = [0.0; FEATURE_DIM];
        v.copy_from_slice(&d[..FEATURE_DIM]);
        LatentNode::new(v, ControlVariable::unflatten(&d[FEATURE_DIM..])?)
    }
}

/// Row-major grayscale intensity grid.
#[derive(Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrayImage({}x{})", self.height, self.width)
    }
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(GrayImage {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        GrayImage {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }
}

/// One synchronized sample of a demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub image: Option<Arc<GrayImage>>,
    /// Pre-encoded image features, when the image path has already run.
    pub features: Option<Features>,
    pub w: ControlVariable,
}

impl Frame {
    pub fn node(&self) -> Option<LatentNode> {
        self.features.map(|v| LatentNode { v, w: self.w })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Demonstration {
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "male" => Some(Gender::Male),
            "female" => Some(Gender::Female),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BmiClass {
    Underweight,
    Normal,
    Overweight,
}

impl BmiClass {
    /// WHO cut-offs: below 18.5 underweight, 25 and above overweight.
    pub fn from_bmi(bmi: f64) -> Self {
        if bmi < 18.5 {
            BmiClass::Underweight
        } else if bmi >= 25.0 {
            BmiClass::Overweight
        } else {
            BmiClass::Normal
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BmiClass::Underweight => "underweight",
            BmiClass::Normal => "normal",
            BmiClass::Overweight => "overweight",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "underweight" => Some(BmiClass::Underweight),
            "normal" => Some(BmiClass::Normal),
            "overweight" => Some(BmiClass::Overweight),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMeta {
    pub id: u32,
    pub age: u32,
    pub gender: Gender,
    pub height: f64,
    pub weight: f64,
    pub bmi: f64,
    pub bmi_class: BmiClass,
}

impl SubjectMeta {
    pub fn new(id: u32, age: u32, gender: Gender, height: f64, weight: f64) -> Result<Self> {
        if !(height > 0.0 && height.is_finite()) || !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::invalid("height and weight must be positive"));
        }
        let bmi = weight / (height * height);
        Ok(SubjectMeta {
            id,
            age,
            gender,
            height,
            weight,
            bmi,
            bmi_class: BmiClass::from_bmi(bmi),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bmi = self.weight / (self.height * self.height);
        if !bmi.is_finite() || (bmi - self.bmi).abs() > 1e-3 {
            return Err(Error::schema(format!(
                "subject {}: stored BMI {} disagrees with weight/height^2 = {bmi}",
                self.id, self.bmi
            )));
        }
        if BmiClass::from_bmi(self.bmi) != self.bmi_class {
            return Err(Error::schema(format!(
                "subject {}: BMI {} is not {}",
                self.id,
                self.bmi,
                self.bmi_class.as_str()
            )));
        }
        Ok(())
    }
}

/// The 24-person cohort used for the default synthetic corpus:
/// `(id, age, gender, height m, weight kg)`.
const COHORT: [(u32, u32, Gender, f64, f64); 24] = [
    (1, 19, Gender::Male, 1.65, 49.0),
    (2, 35, Gender::Male, 1.74, 68.0),
    (3, 27, Gender::Male, 1.72, 79.0),
    (4, 25, Gender::Male, 1.72, 62.0),
    (5, 23, Gender::Male, 1.84, 90.0),
    (6, 24, Gender::Male, 1.62, 46.0),
    (7, 23, Gender::Male, 1.79, 81.0),
    (8, 23, Gender::Male, 1.76, 53.0),
    (9, 22, Gender::Male, 1.77, 80.0),
    (10, 24, Gender::Male, 1.82, 72.0),
    (11, 27, Gender::Male, 1.81, 68.0),
    (12, 36, Gender::Male, 1.68, 54.0),
    (13, 67, Gender::Female, 1.60, 65.0),
    (14, 24, Gender::Male, 1.70, 67.0),
    (15, 22, Gender::Female, 1.62, 60.0),
    (16, 23, Gender::Male, 1.70, 55.0),
    (17, 19, Gender::Female, 1.58, 46.0),
    (18, 24, Gender::Female, 1.63, 51.0),
    (19, 25, Gender::Female, 1.55, 55.0),
    (20, 21, Gender::Female, 1.69, 60.0),
    (21, 19, Gender::Female, 1.54, 39.0),
    (22, 19, Gender::Female, 1.61, 55.0),
    (23, 24, Gender::Female, 1.58, 50.0),
    (24, 25, Gender::Female, 1.62, 49.0),
];

pub fn reference_cohort() -> Vec<SubjectMeta> {
    COHORT
        .iter()
        .map(|&(id, age, g, h, w)| SubjectMeta::new(id, age, g, h, w).expect("static cohort"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub meta: SubjectMeta,
    pub demos: Vec<Demonstration>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.frames().count()
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.subjects
            .iter()
            .flat_map(|s| s.demos.iter())
            .flat_map(|d| d.frames.iter())
    }

    /// Latent nodes of every frame; fails if any frame lacks features.
    pub fn nodes(&self) -> Result<Vec<LatentNode>> {
        self.frames()
            .map(|f| {
                f.node().ok_or_else(|| {
                    Error::invalid("frame has no encoded features; run the image encoder first")
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.subjects {
            s.meta.validate()?;
            if s.demos.is_empty() {
                return Err(Error::schema(format!("subject {} has no demonstrations", s.meta.id)));
            }
            for (di, d) in s.demos.iter().enumerate() {
                if d.frames.len() < 2 {
                    return Err(Error::schema(format!(
                        "subject {} demo {di} has {} frames, need at least 2",
                        s.meta.id,
                        d.frames.len()
                    )));
                }
                for (fi, pair) in d.frames.windows(2).enumerate() {
                    if !(pair[1].timestamp > pair[0].timestamp) {
                        return Err(Error::schema(format!(
                            "subject {} demo {di}: timestamps not strictly increasing at frame {}",
                            s.meta.id,
                            fi + 1
                        )));
                    }
                }
                for f in &d.frames {
                    if !f.timestamp.is_finite() {
                        return Err(Error::schema("non-finite timestamp"));
                    }
                    if let Some(v) = &f.features {
                        if !v.iter().all(|x| x.is_finite()) {
                            return Err(Error::schema("non-finite feature value"));
                        }
                    }
                    if let Some(img) = &f.image {
                        if img.height != IMAGE_SIDE || img.width != IMAGE_SIDE {
                            return Err(Error::schema(format!(
                                "frame image must be {IMAGE_SIDE}x{IMAGE_SIDE}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
