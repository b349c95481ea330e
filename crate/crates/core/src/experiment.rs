//! The full method × task matrix.

use std::path::Path;
use std::time::Instant;

use crate::adaptation::SkillPredictor;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{error_table, evaluate, records_csv, summary, to_csv, EvalReport, Method};
use crate::gmm::{fit_nodes, GmmModel};
use crate::image::{train_encoder, EncoderModel};
use crate::mc::{best_candidate, mc_candidates, train_mlp, MlpModel, SampleBounds};
use crate::stability::{empirical_likelihood_bounds, likelihood_bounds, BoundsMode};
use crate::synth::{generate_corpus, make_split, pretraining_images, ImageHandling, Task};
use crate::types::{ControlVariable, Dataset, LatentNode};

/// Component seeds derived from the master seed.
pub struct Seeds {
    pub corpus: u64,
    pub encoder: u64,
    pub gmm: u64,
    pub mlp: u64,
    pub mc: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            corpus: seed,
            encoder: seed.wrapping_add(1),
            gmm: seed.wrapping_add(2),
            mlp: seed.wrapping_add(3),
            mc: seed.wrapping_mul(0x9e37_79b9).wrapping_add(4),
        }
    }
}

/// Evenly strided subset of at most `max` items, first item included.
pub fn evenly_spaced<T: Clone>(xs: &[T], max: usize) -> Vec<T> {
    if xs.len() <= max {
        return xs.to_vec();
    }
    (0..max).map(|i| xs[i * xs.len() / max].clone()).collect()
}

/// Encoder trained on pretraining renders, then the encoded corpus.
pub fn build_corpus(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<(EncoderModel, Dataset)> {
    let seeds = Seeds::from_master(cfg.seed);
    let corpus_cfg = crate::synth::CorpusConfig {
        seed: seeds.corpus,
        ..cfg.corpus.clone()
    };
    let t = Instant::now();
    let pre = pretraining_images(&corpus_cfg, cfg.encoder.max_images)?;
    let enc_cfg = crate::image::EncoderConfig {
        seed: seeds.encoder,
        ..cfg.encoder.clone()
    };
    let trained = train_encoder(&pre, &enc_cfg)?;
    log(&format!(
        "encoder: {} images, loss {:.6} -> {:.6} ({:.1}s)",
        pre.frame_count(),
        trained.losses[0],
        trained.losses.last().unwrap(),
        t.elapsed().as_secs_f64()
    ));
    let t = Instant::now();
    let ds = generate_corpus(&corpus_cfg, ImageHandling::Encode(&trained.model))?;
    log(&format!(
        "corpus: {} subjects, {} frames ({:.1}s)",
        ds.subjects.len(),
        ds.frame_count(),
        t.elapsed().as_secs_f64()
    ));
    Ok((trained.model, ds))
}

pub fn train_gmm(cfg: &ExperimentConfig, train: &[LatentNode]) -> Result<GmmModel> {
    let nodes = evenly_spaced(train, cfg.max_train_nodes);
    if nodes.len() < cfg.components {
        return Err(Error::invalid(format!(
            "{} training nodes cannot support {} components",
            nodes.len(),
            cfg.components
        )));
    }
    let em = crate::gmm::EmConfig {
        seed: Seeds::from_master(cfg.seed).gmm,
        ..cfg.em.clone()
    };
    Ok(fit_nodes(&nodes, cfg.components, &em)?.model)
}

pub fn gmm_predictor(cfg: &ExperimentConfig, model: &GmmModel, sigma: f64, train: &[LatentNode]) -> Result<SkillPredictor> {
    let bounds = match cfg.bounds {
        BoundsMode::Analytic => likelihood_bounds(model, sigma)?,
        BoundsMode::Empirical => {
            let pts: Vec<Vec<f64>> = evenly_spaced(train, cfg.max_train_nodes)
                .iter()
                .map(|n| n.to_array().to_vec())
                .collect();
            empirical_likelihood_bounds(model, sigma, &pts)?
        }
    };
    SkillPredictor::with_bounds(model.clone(), bounds, cfg.adapt)
}

pub fn train_mc(cfg: &ExperimentConfig, train: &[LatentNode]) -> Result<(MlpModel, SampleBounds)> {
    let mlp = crate::mc::MlpConfig {
        seed: Seeds::from_master(cfg.seed).mlp,
        ..cfg.mlp.clone()
    };
    let t = train_mlp(train, &mlp)?;
    Ok((t.model, t.bounds))
}

/// Per-frame MC seed: candidate streams differ across frames but not across
/// sample counts, so larger counts see a superset of candidates.
pub fn mc_frame_seed(cfg: &ExperimentConfig, frame: usize) -> u64 {
    Seeds::from_master(cfg.seed).mc.wrapping_add(frame as u64)
}

pub fn run_task(cfg: &ExperimentConfig, ds: &Dataset, task: Task, log: &mut dyn FnMut(&str)) -> Result<Vec<EvalReport>> {
    let (train, test) = make_split(ds, task)?;
    let train = train.nodes()?;
    let test = evenly_spaced(&test.nodes()?, cfg.eval_max_frames);
    let name = task.as_str();
    let mut reports = Vec::new();

    let t = Instant::now();
    let model = train_gmm(cfg, &train)?;
    log(&format!("{name}: gmm fitted on {} nodes ({:.1}s)", train.len().min(cfg.max_train_nodes), t.elapsed().as_secs_f64()));
    for &sigma in &cfg.sigmas {
        let p = gmm_predictor(cfg, &model, sigma, &train)?;
        reports.push(evaluate(Method::Gmm { sigma }, name, &test, |_, v| {
            let r = p.predict(v)?;
            Ok((r.control, Some(r.verdict.stable)))
        })?);
    }

    let t = Instant::now();
    let (mlp, bounds) = train_mc(cfg, &train)?;
    log(&format!("{name}: mlp trained ({:.1}s)", t.elapsed().as_secs_f64()));
    for &n in &cfg.mc_samples {
        reports.push(evaluate(Method::Mc { samples: n }, name, &test, |i, v| {
            let cands = mc_candidates(&bounds, n, mc_frame_seed(cfg, i))?;
            let (best, _) = best_candidate(&mlp, v, &cands)?;
            Ok((ControlVariable::unflatten(&cands[best])?, None))
        })?);
    }
    Ok(reports)
}

pub fn run_experiment(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let (_, ds) = build_corpus(cfg, log)?;
    run_on_dataset(cfg, &ds, log)
}

pub fn run_on_dataset(cfg: &ExperimentConfig, ds: &Dataset, log: &mut dyn FnMut(&str)) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for &task in &cfg.tasks {
        reports.extend(run_task(cfg, ds, task, log)?);
    }
    Ok(reports)
}

/// Writes `results.csv`, `errors.csv`, `summary.txt` and optionally the
/// per-frame error files into `dir`.
pub fn write_reports(dir: impl AsRef<Path>, reports: &[EvalReport], per_frame: bool) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("results.csv", to_csv(reports))?;
    write("errors.csv", error_table(reports))?;
    write("summary.txt", summary(reports))?;
    if per_frame {
        for r in reports {
            write(&format!("frames_{}_{}_{}.csv", r.task, r.method.name(), r.method.param()), records_csv(r))?;
        }
    }
    Ok(())
}
