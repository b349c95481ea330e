//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors, and
//! every error names the offending key.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gmm::EmConfig;
use crate::image::EncoderConfig;
use crate::mc::{MlpConfig, MC_SAMPLE_COUNTS};
use crate::stability::{BoundsMode, DEFAULT_SIGMA};
use crate::synth::{CorpusConfig, Task};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub encoder: EncoderConfig,
    pub components: usize,
    pub em: EmConfig,
    /// GMM training nodes per task, taken evenly across the training split.
    pub max_train_nodes: usize,
    pub sigmas: Vec<f64>,
    pub bounds: BoundsMode,
    pub adapt: bool,
    pub mlp: MlpConfig,
    pub mc_samples: Vec<usize>,
    pub tasks: Vec<Task>,
    /// Test frames per task, taken evenly across the test split.
    pub eval_max_frames: usize,
    pub write_frames: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            corpus: CorpusConfig::default(),
            encoder: EncoderConfig::default(),
            components: 16,
            em: EmConfig::default(),
            max_train_nodes: 6000,
            sigmas: vec![1.0, 2.0, DEFAULT_SIGMA],
            bounds: BoundsMode::Analytic,
            adapt: true,
            mlp: MlpConfig::default(),
            mc_samples: MC_SAMPLE_COUNTS.to_vec(),
            tasks: Task::ALL.to_vec(),
            eval_max_frames: 400,
            write_frames: false,
        }
    }
}

fn bad(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(field, format!("cannot parse `{v}`")))
}

fn list<T: std::str::FromStr>(field: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(field, s.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn boolean(field: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(field, format!("expected true or false, found `{v}`"))),
    }
}

impl ExperimentConfig {
    /// Sets one key, as read from a file or a command-line override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "seed" => self.seed = num(key, v)?,
            "corpus.subjects" => self.corpus.subjects = num(key, v)?,
            "corpus.demos" => self.corpus.demos = num(key, v)?,
            "corpus.duration_s" => self.corpus.duration_s = num(key, v)?,
            "corpus.rate_hz" => self.corpus.rate_hz = num(key, v)?,
            "encoder.hidden" => self.encoder.hidden = num(key, v)?,
            "encoder.learning_rate" => self.encoder.learning_rate = num(key, v)?,
            "encoder.epochs" => self.encoder.epochs = num(key, v)?,
            "encoder.max_images" => self.encoder.max_images = num(key, v)?,
            "gmm.components" => self.components = num(key, v)?,
            "gmm.max_iter" => self.em.max_iter = num(key, v)?,
            "gmm.tol" => self.em.tol = num(key, v)?,
            "gmm.reg" => self.em.reg = num(key, v)?,
            "gmm.max_train_nodes" => self.max_train_nodes = num(key, v)?,
            "stability.sigmas" => self.sigmas = list(key, v)?,
            "stability.bounds" => {
                self.bounds = BoundsMode::parse(v).ok_or_else(|| bad(key, format!("expected analytic or empirical, found `{v}`")))?
            }
            "adapt" => self.adapt = boolean(key, v)?,
            "mc.hidden" => self.mlp.hidden = list(key, v)?,
            "mc.learning_rate" => self.mlp.learning_rate = num(key, v)?,
            "mc.epochs" => self.mlp.epochs = num(key, v)?,
            "mc.max_positives" => self.mlp.max_positives = num(key, v)?,
            "mc.samples" => self.mc_samples = list(key, v)?,
            "eval.tasks" => {
                self.tasks = v
                    .split(',')
                    .map(|t| Task::parse(t).ok_or_else(|| bad(key, format!("unknown task `{}`", t.trim()))))
                    .collect::<Result<_>>()?
            }
            "eval.max_frames" => self.eval_max_frames = num(key, v)?,
            "eval.write_frames" => self.write_frames = boolean(key, v)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("line {}", i + 1), format!("expected `key = value`, found `{line}`")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.subjects == 0 || c.subjects > 24 {
            return Err(bad("corpus.subjects", "must be within 1..=24"));
        }
        if c.demos == 0 {
            return Err(bad("corpus.demos", "must be at least 1"));
        }
        if !(5.0..=120.0).contains(&c.duration_s) {
            return Err(bad("corpus.duration_s", "must be within [5, 120]"));
        }
        if !(c.rate_hz > 0.0 && c.rate_hz <= 1000.0) {
            return Err(bad("corpus.rate_hz", "must be within (0, 1000]"));
        }
        if self.encoder.hidden == 0 {
            return Err(bad("encoder.hidden", "must be positive"));
        }
        if !(self.encoder.learning_rate > 0.0) {
            return Err(bad("encoder.learning_rate", "must be positive"));
        }
        if self.encoder.max_images == 0 {
            return Err(bad("encoder.max_images", "must be positive"));
        }
        if self.components == 0 {
            return Err(bad("gmm.components", "must be positive"));
        }
        if !(self.em.tol >= 0.0) {
            return Err(bad("gmm.tol", "must be non-negative"));
        }
        if !(self.em.reg > 0.0) {
            return Err(bad("gmm.reg", "must be positive"));
        }
        if self.max_train_nodes < self.components {
            return Err(bad("gmm.max_train_nodes", "must be at least gmm.components"));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(bad("stability.sigmas", "needs one or more positive values"));
        }
        if self.mlp.hidden.is_empty() || self.mlp.hidden.contains(&0) {
            return Err(bad("mc.hidden", "needs one or more positive layer widths"));
        }
        if !(self.mlp.learning_rate > 0.0) {
            return Err(bad("mc.learning_rate", "must be positive"));
        }
        if self.mc_samples.contains(&0) {
            return Err(bad("mc.samples", "sample counts must be positive"));
        }
        if self.tasks.is_empty() {
            return Err(bad("eval.tasks", "needs at least one task"));
        }
        if self.eval_max_frames == 0 {
            return Err(bad("eval.max_frames", "must be positive"));
        }
        Ok(())
    }

    /// Every key with its current value; parses back to the same config.
    pub fn to_text(&self) -> String {
        let tasks: Vec<&str> = self.tasks.iter().map(|t| t.as_str()).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("corpus.subjects", self.corpus.subjects.to_string()),
            ("corpus.demos", self.corpus.demos.to_string()),
            ("corpus.duration_s", self.corpus.duration_s.to_string()),
            ("corpus.rate_hz", self.corpus.rate_hz.to_string()),
            ("encoder.hidden", self.encoder.hidden.to_string()),
            ("encoder.learning_rate", self.encoder.learning_rate.to_string()),
            ("encoder.epochs", self.encoder.epochs.to_string()),
            ("encoder.max_images", self.encoder.max_images.to_string()),
            ("gmm.components", self.components.to_string()),
            ("gmm.max_iter", self.em.max_iter.to_string()),
            ("gmm.tol", self.em.tol.to_string()),
            ("gmm.reg", self.em.reg.to_string()),
            ("gmm.max_train_nodes", self.max_train_nodes.to_string()),
            ("stability.sigmas", join(&self.sigmas)),
            ("stability.bounds", self.bounds.as_str().to_string()),
            ("adapt", self.adapt.to_string()),
            ("mc.hidden", join(&self.mlp.hidden)),
            ("mc.learning_rate", self.mlp.learning_rate.to_string()),
            ("mc.epochs", self.mlp.epochs.to_string()),
            ("mc.max_positives", self.mlp.max_positives.to_string()),
            ("mc.samples", join(&self.mc_samples)),
            ("eval.tasks", tasks.join(",")),
            ("eval.max_frames", self.eval_max_frames.to_string()),
            ("eval.write_frames", self.write_frames.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.sigmas.len() + cfg.mc_samples.len(), 11);
    }

    #[test]
    fn parses_values_and_comments() {
        let cfg = ExperimentConfig::parse("# demo\nseed = 7\neval.tasks = intra, inter-bmi # two\nmc.samples=50,100\nadapt = no\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.tasks, vec![Task::Intra, Task::InterBmi]);
        assert_eq!(cfg.mc_samples, vec![50, 100]);
        assert!(!cfg.adapt);
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| match ExperimentConfig::parse(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field("gmm.components = many"), "gmm.components");
        assert_eq!(field("gmm.wat = 1"), "gmm.wat");
        assert_eq!(field("stability.sigmas = 1,-2"), "stability.sigmas");
        assert_eq!(field("eval.tasks = intra,bogus"), "eval.tasks");
        assert_eq!(field("corpus.subjects = 30"), "corpus.subjects");
        assert_eq!(field("just words"), "line 1");
    }
}
