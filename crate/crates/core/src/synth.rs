//! Synthetic scanning demonstrations and the evaluation splits.
//!
//! Subjects differ through monotone style transforms: contact force grows
//! with BMI, the probe is tilted more for older subjects and to opposite
//! sides by gender, and each subject's anatomy shifts the target in the
//! image and the phase of the scan path.
//!
//! Every demonstration is drawn from its own ChaCha stream seeded with
//! `subject_id·1000 + demo_index`; the corpus seed selects the stream.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::EncoderModel;
use crate::quat::Quaternion;
use crate::types::{
    reference_cohort, BmiClass, ControlVariable, Dataset, Demonstration, Frame, Gender, GrayImage, Subject, SubjectMeta,
    Wrench, IMAGE_SIDE,
};

pub const DEFAULT_RATE_HZ: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseScales {
    /// Force noise, N.
    pub force: f64,
    /// Torque noise, Nm.
    pub torque: f64,
    pub orientation_deg: f64,
    /// Peak-to-peak pixel speckle.
    pub image: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        NoiseScales {
            force: 0.25,
            torque: 0.004,
            orientation_deg: 0.4,
            image: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub meta: SubjectMeta,
    pub force_scale: f64,
    pub orientation_bias: Quaternion,
    pub tilt_deg: f64,
    pub yaw_deg: f64,
    /// Radians; offsets the scan path and the target position in the image.
    pub anatomy_phase: f64,
    pub noise: NoiseScales,
}

pub fn force_scale(bmi: f64) -> f64 {
    0.5 + 0.06 * (bmi - 16.0)
}

pub fn generate_subject(meta: &SubjectMeta, seed: u64) -> SubjectProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(meta.id) << 32));
    let tilt_deg = f64::from(meta.age) / 67.0 * 10.0;
    let yaw_deg = match meta.gender {
        Gender::Male => 5.0,
        Gender::Female => -5.0,
    };
    SubjectProfile {
        meta: meta.clone(),
        force_scale: force_scale(meta.bmi),
        orientation_bias: bias_rotation(tilt_deg, yaw_deg, 1.0),
        tilt_deg,
        yaw_deg,
        anatomy_phase: rng.random_range(0.0..2.0 * PI),
        noise: NoiseScales::default(),
    }
}

fn rot(axis: [f64; 3], deg: f64) -> Quaternion {
    Quaternion::from_axis_angle(axis, deg).expect("fixed axis")
}

fn bias_rotation(tilt_deg: f64, yaw_deg: f64, r: f64) -> Quaternion {
    (rot([1.0, 0.0, 0.0], tilt_deg * r) * rot([0.0, 1.0, 0.0], yaw_deg * r)).renormalized()
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Unit-variance AR(1) noise with correlation `rho` between frames.
struct Ar1 {
    state: f64,
    rho: f64,
}

impl Ar1 {
    fn new(rho: f64) -> Self {
        Ar1 { state: 0.0, rho }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        self.state = self.rho * self.state + (1.0 - self.rho * self.rho).sqrt() * e;
        self.state
    }
}

/// What to do with the per-frame phantom image.
#[derive(Clone, Copy)]
pub enum ImageHandling<'a> {
    /// Controls only.
    Skip,
    /// Store the rendered image on the frame.
    Keep,
    /// Render, encode into features and discard the pixels.
    Encode(&'a EncoderModel),
}

impl fmt::Debug for ImageHandling<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImageHandling::Skip => "Skip",
            ImageHandling::Keep => "Keep",
            ImageHandling::Encode(_) => "Encode",
        })
    }
}

/// A stream seeded by the documented per-demo rule, with the corpus seed as
/// the stream selector.
pub fn demo_rng(subject_id: u32, demo_index: usize, corpus_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(subject_id) * 1000 + demo_index as u64);
    rng.set_stream(corpus_seed);
    rng
}

pub fn generate_demo(
    profile: &SubjectProfile,
    duration_s: f64,
    rate_hz: f64,
    rng: &mut ChaCha8Rng,
    images: ImageHandling<'_>,
) -> Result<Demonstration> {
    if !(5.0..=120.0).contains(&duration_s) {
        return Err(Error::invalid(format!("duration must be within [5, 120] s, got {duration_s}")));
    }
    if !(rate_hz > 0.0 && rate_hz <= 1000.0) {
        return Err(Error::invalid(format!("rate must be within (0, 1000] Hz, got {rate_hz}")));
    }
    let n = (duration_s * rate_hz).round() as usize;
    if n < 2 {
        return Err(Error::invalid("demonstration would have fewer than 2 frames"));
    }
    let sweep_deg = 15.0 + rng.random_range(-3.0..3.0);
    let lift_deg = 8.0 + rng.random_range(-2.0..2.0);
    let phase = profile.anatomy_phase + rng.random_range(-0.3..0.3);
    let cycles = 2.0;
    let ramp_s = (duration_s / 8.0).min(4.0);
    let plateau = profile.force_scale * 10.0;
    let nz = profile.noise;
    let mut noise: Vec<Ar1> = (0..9).map(|_| Ar1::new(0.9)).collect();
    // Speckle has its own stream so controls do not depend on image handling.
    let mut pix_rng = ChaCha8Rng::seed_from_u64(rng.random());

    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate_hz;
        let s = t / duration_s;
        let r = smoothstep(t / ramp_s);
        let ang = 2.0 * PI * cycles * s + phase;
        let mut draws = [0.0; 9];
        for (d, a) in draws.iter_mut().zip(noise.iter_mut()) {
            *d = a.next(rng);
        }

        let p = if r == 0.0 {
            Quaternion::identity()
        } else {
            let left = rot([0.0, 1.0, 0.0], -sweep_deg);
            let right = rot([0.0, 1.0, 0.0], sweep_deg);
            let sweep = left.slerp(&right, 0.5 * (1.0 + ang.sin()));
            let lift = rot([1.0, 0.0, 0.0], lift_deg * 0.5 * (1.0 - (2.0 * PI * s).cos()));
            let jitter = rot([draws[0], draws[1], draws[2] + 1e-9], nz.orientation_deg * r);
            let target = (bias_rotation(profile.tilt_deg, profile.yaw_deg, 1.0) * sweep * lift * jitter).renormalized();
            Quaternion::identity().slerp(&target, r)
        };

        let fz = r * plateau * (1.0 + 0.12 * (ang + PI / 2.0).sin() * (2.0 * PI * s).sin()) + r * nz.force * draws[3];
        let fx = r * 0.2 * plateau * ang.cos() + r * nz.force * 0.5 * draws[4];
        let fy = r * 0.1 * plateau * (2.0 * PI * s).sin() + r * nz.force * 0.5 * draws[5];
        let lever = 0.03;
        let torque = [
            -lever * fy + r * nz.torque * draws[6],
            lever * fx + r * nz.torque * draws[7],
            r * 0.0002 * plateau * (2.0 * ang).sin() + r * nz.torque * draws[8],
        ];
        let w = ControlVariable {
            p,
            f: Wrench::new([fx, fy, fz], torque)?,
        };

        let (image, features) = match images {
            ImageHandling::Skip => (None, None),
            ImageHandling::Keep => (Some(Arc::new(render_phantom(profile, &w, &mut pix_rng))), None),
            ImageHandling::Encode(enc) => (None, Some(enc.encode(&render_phantom(profile, &w, &mut pix_rng))?)),
        };
        frames.push(Frame {
            timestamp: t,
            image,
            features,
            w,
        });
    }
    Ok(Demonstration { frames })
}

/// One bright soft-edged ellipse below a fat layer, on uniform speckle. The
/// ellipse moves with the probe axis, flattens under normal force and is
/// offset by the subject's anatomy; the fat layer thickens with BMI.
pub fn render_phantom<R: Rng>(profile: &SubjectProfile, w: &ControlVariable, rng: &mut R) -> GrayImage {
    let side = IMAGE_SIDE as f64;
    let axis = w.p.rotate([0.0, 0.0, 1.0]);
    let fz = w.f.force[2].max(0.0);
    let cx = 0.5 * side + 240.0 * axis[0] + 10.0 * profile.anatomy_phase.cos();
    let cy = 0.55 * side - 240.0 * axis[1] + 10.0 * profile.anatomy_phase.sin();
    let rx = 40.0 + 0.8 * fz;
    let ry = (40.0 - 1.5 * fz).max(8.0);
    let band = 8.0 + 2.5 * (profile.meta.bmi - 16.0).max(0.0);
    let edge = 0.5 * rx.min(ry);
    let speckle = profile.noise.image;

    let mut data = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for row in 0..IMAGE_SIDE {
        let y = row as f64 + 0.5;
        let base = if y < band { 0.45 } else { 0.12 };
        let dy = (y - cy) / ry;
        for col in 0..IMAGE_SIDE {
            let dx = (col as f64 + 0.5 - cx) / rx;
            let rho = (dx * dx + dy * dy).sqrt();
            let inside = ((1.0 - rho) * edge / 2.0 + 0.5).clamp(0.0, 1.0);
            let v = base + (0.85 - base) * inside + speckle * (rng.random::<f64>() - 0.5);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    GrayImage::new(IMAGE_SIDE, IMAGE_SIDE, data).expect("square render")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub subjects: usize,
    pub demos: usize,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            subjects: 24,
            demos: 5,
            duration_s: 40.0,
            rate_hz: DEFAULT_RATE_HZ,
            seed: 0,
        }
    }
}

/// The first `cfg.subjects` volunteers of the reference cohort.
pub fn generate_corpus(cfg: &CorpusConfig, images: ImageHandling<'_>) -> Result<Dataset> {
    let cohort = reference_cohort();
    if cfg.subjects == 0 || cfg.subjects > cohort.len() {
        return Err(Error::invalid(format!(
            "subject count must be within 1..={}, got {}",
            cohort.len(),
            cfg.subjects
        )));
    }
    if cfg.demos == 0 {
        return Err(Error::invalid("need at least one demonstration per subject"));
    }
    let mut subjects = Vec::with_capacity(cfg.subjects);
    for meta in cohort.into_iter().take(cfg.subjects) {
        let profile = generate_subject(&meta, cfg.seed);
        let demos = (0..cfg.demos)
            .map(|d| generate_demo(&profile, cfg.duration_s, cfg.rate_hz, &mut demo_rng(meta.id, d, cfg.seed), images))
            .collect::<Result<Vec<_>>>()?;
        subjects.push(Subject { meta, demos });
    }
    Ok(Dataset { subjects })
}

/// Evenly spread sample of phantom frames from every subject, drawn from
/// streams disjoint from [`generate_corpus`] with the same seed.
pub fn pretraining_images(cfg: &CorpusConfig, count: usize) -> Result<Dataset> {
    let cohort = reference_cohort();
    let n_sub = cfg.subjects.clamp(1, cohort.len());
    let per_subject = count.div_ceil(n_sub).max(2);
    let mut subjects = Vec::with_capacity(n_sub);
    for meta in cohort.into_iter().take(n_sub) {
        let profile = generate_subject(&meta, cfg.seed);
        let mut rng = demo_rng(meta.id, 999, cfg.seed);
        let demo = generate_demo(&profile, cfg.duration_s, cfg.rate_hz, &mut rng, ImageHandling::Skip)?;
        let stride = (demo.frames.len() / per_subject).max(1);
        let mut frames = Vec::with_capacity(per_subject);
        for f in demo.frames.iter().step_by(stride).take(per_subject) {
            let mut f = f.clone();
            f.image = Some(Arc::new(render_phantom(&profile, &f.w, &mut rng)));
            frames.push(f);
        }
        subjects.push(Subject {
            meta,
            demos: vec![Demonstration { frames }],
        });
    }
    Ok(Dataset { subjects })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Intra,
    InterPatient,
    InterGender,
    InterAge,
    InterBmi,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Intra, Task::InterPatient, Task::InterGender, Task::InterAge, Task::InterBmi];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Intra => "intra",
            Task::InterPatient => "inter_patient",
            Task::InterGender => "inter_gender",
            Task::InterAge => "inter_age",
            Task::InterBmi => "inter_bmi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().replace('-', "_");
        Task::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn partition(ds: &Dataset, test: impl Fn(&Subject) -> bool) -> (Dataset, Dataset) {
    let (te, tr): (Vec<Subject>, Vec<Subject>) = ds.subjects.iter().cloned().partition(|s| test(s));
    (Dataset { subjects: tr }, Dataset { subjects: te })
}

fn check_nonempty(task: Task, train: &Dataset, test: &Dataset) -> Result<()> {
    if train.subjects.is_empty() || test.subjects.is_empty() {
        return Err(Error::Split(format!("{task}: split leaves an empty train or test set")));
    }
    Ok(())
}

/// Partitions `ds` into `(train, test)` for `task`.
///
/// * intra: last demonstration of every subject is test
/// * inter_patient: the two highest subject ids are test
/// * inter_gender: the larger gender trains (male on a tie)
/// * inter_age: the oldest quarter (rounded up, ties by id) is test
/// * inter_bmi: normal-BMI subjects train, the rest test
pub fn make_split(ds: &Dataset, task: Task) -> Result<(Dataset, Dataset)> {
    let (train, test) = match task {
        Task::Intra => {
            let mut train = Dataset::default();
            let mut test = Dataset::default();
            for s in &ds.subjects {
                if s.demos.len() < 2 {
                    return Err(Error::Split(format!(
                        "intra: subject {} has {} demonstration(s), need at least 2",
                        s.meta.id,
                        s.demos.len()
                    )));
                }
                let (head, last) = s.demos.split_at(s.demos.len() - 1);
                train.subjects.push(Subject {
                    meta: s.meta.clone(),
                    demos: head.to_vec(),
                });
                test.subjects.push(Subject {
                    meta: s.meta.clone(),
                    demos: last.to_vec(),
                });
            }
            (train, test)
        }
        Task::InterPatient => {
            if ds.subjects.len() < 3 {
                return Err(Error::Split("inter_patient: need at least 3 subjects".into()));
            }
            let mut ids: Vec<u32> = ds.subjects.iter().map(|s| s.meta.id).collect();
            ids.sort_unstable();
            let cut = ids[ids.len() - 2];
            partition(ds, |s| s.meta.id >= cut)
        }
        Task::InterGender => {
            let males = ds.subjects.iter().filter(|s| s.meta.gender == Gender::Male).count();
            let females = ds.subjects.len() - males;
            let train_gender = if males >= females { Gender::Male } else { Gender::Female };
            partition(ds, |s| s.meta.gender != train_gender)
        }
        Task::InterAge => {
            if ds.subjects.len() < 2 {
                return Err(Error::Split("inter_age: need at least 2 subjects".into()));
            }
            let mut order: Vec<(u32, u32)> = ds.subjects.iter().map(|s| (s.meta.age, s.meta.id)).collect();
            order.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let n_test = ds.subjects.len().div_ceil(4);
            let oldest: Vec<u32> = order[..n_test].iter().map(|p| p.1).collect();
            partition(ds, |s| oldest.contains(&s.meta.id))
        }
        Task::InterBmi => partition(ds, |s| s.meta.bmi_class != BmiClass::Normal),
    };
    check_nonempty(task, &train, &test)?;
    Ok((train, test))
}
