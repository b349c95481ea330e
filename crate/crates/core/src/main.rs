use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sonoskill::adaptation::SkillPredictor;
use sonoskill::config::ExperimentConfig;
use sonoskill::eval::{evaluate, summary, to_csv, Method};
use sonoskill::experiment::{
    build_corpus, evenly_spaced, mc_frame_seed, run_experiment, train_gmm, train_mc, write_reports,
};
use sonoskill::gmm::GmmModel;
use sonoskill::image::{train_encoder, EncoderModel};
use sonoskill::mc::{best_candidate, load_mc, mc_candidates, save_mc};
use sonoskill::synth::{generate_corpus, make_split, CorpusConfig, ImageHandling, Task};
use sonoskill::trajectory::{load_dataset, save_dataset};
use sonoskill::{ControlVariable, Dataset, LatentNode};

#[derive(Parser)]
#[command(name = "sonoskill", version, about = "Scanning-skill models from demonstrations")]
struct Cli {
    /// Master seed; component seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Encode the images of a dataset into features.
    Encode(EncodeArgs),
    /// Fit the mixture model.
    TrainGmm(TrainArgs),
    /// Train the Monte-Carlo scorer.
    TrainMc(TrainArgs),
    /// Predict a control for every frame of a dataset.
    Predict(PredictArgs),
    /// Score predictions against the recorded controls.
    Eval(PredictArgs),
    /// Run the full method × task matrix.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 24)]
    subjects: usize,
    #[arg(long, default_value_t = 5)]
    demos: usize,
    /// Seconds per demonstration.
    #[arg(long, default_value_t = 40.0)]
    duration: f64,
    /// Store raw images instead of encoded features.
    #[arg(long)]
    with_images: bool,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Existing encoder; a new one is trained on the dataset's images otherwise.
    #[arg(long)]
    encoder: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Train on this task's training split instead of the whole dataset.
    #[arg(long)]
    task: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Gmm,
    Mc,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Gmm)]
    method: MethodArg,
    #[arg(long, default_value_t = sonoskill::stability::DEFAULT_SIGMA)]
    sigma: f64,
    /// Report raw regression outputs without snapping unstable ones.
    #[arg(long)]
    no_adapt: bool,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Use this task's test split instead of the whole dataset.
    #[arg(long)]
    task: Option<String>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Comma-separated subset of tasks.
    #[arg(long)]
    tasks: Option<String>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    no_adapt: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn parse_task(s: &str) -> Result<Task> {
    Task::parse(s).with_context(|| format!("unknown task `{s}`"))
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Gen(a) => gen(cli, &cfg, a),
        Command::Encode(a) => encode(cli, &cfg, a),
        Command::TrainGmm(a) => {
            let nodes = training_nodes(a)?;
            let model = train_gmm(&cfg, &nodes)?;
            let out = out_path(cli, "gmm.txt");
            model.save(&out)?;
            log(&format!("wrote {}", out.display()));
            Ok(())
        }
        Command::TrainMc(a) => {
            let nodes = training_nodes(a)?;
            let (mlp, bounds) = train_mc(&cfg, &nodes)?;
            let out = out_path(cli, "mc.txt");
            save_mc(&out, &mlp, &bounds)?;
            log(&format!("wrote {}", out.display()));
            Ok(())
        }
        Command::Predict(a) => predict(cli, &cfg, a),
        Command::Eval(a) => eval(cli, &cfg, a),
        Command::Experiment(a) => experiment(cli, cfg, a),
    }
}

fn gen(cli: &Cli, cfg: &ExperimentConfig, a: &GenArgs) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.corpus = CorpusConfig {
        subjects: a.subjects,
        demos: a.demos,
        duration_s: a.duration,
        seed: cfg.seed,
        ..cfg.corpus
    };
    cfg.validate()?;
    let out = out_path(cli, "corpus");
    if a.with_images {
        let ds = generate_corpus(&cfg.corpus, ImageHandling::Keep)?;
        save_dataset(&ds, &out)?;
    } else {
        let (enc, ds) = build_corpus(&cfg, &mut |m| log(m))?;
        save_dataset(&ds, &out)?;
        enc.save(out.join("encoder.txt"))?;
    }
    log(&format!("wrote {}", out.display()));
    Ok(())
}

fn encode(cli: &Cli, cfg: &ExperimentConfig, a: &EncodeArgs) -> Result<()> {
    let mut ds = load_dataset(&a.data)?;
    let enc = match &a.encoder {
        Some(p) => EncoderModel::load(p)?,
        None => {
            let t = train_encoder(&ds, &cfg.encoder)?;
            log(&format!("encoder loss {:.6} -> {:.6}", t.losses[0], t.losses.last().unwrap()));
            t.model
        }
    };
    enc.encode_dataset(&mut ds, true)?;
    let out = out_path(cli, "encoded");
    save_dataset(&ds, &out)?;
    enc.save(out.join("encoder.txt"))?;
    log(&format!("wrote {}", out.display()));
    Ok(())
}

fn training_nodes(a: &TrainArgs) -> Result<Vec<LatentNode>> {
    let ds = load_dataset(&a.data)?;
    let ds = match &a.task {
        Some(t) => make_split(&ds, parse_task(t)?)?.0,
        None => ds,
    };
    Ok(ds.nodes()?)
}

fn test_nodes(a: &PredictArgs) -> Result<Vec<LatentNode>> {
    let ds: Dataset = load_dataset(&a.data)?;
    let ds = match &a.task {
        Some(t) => make_split(&ds, parse_task(t)?)?.1,
        None => ds,
    };
    Ok(ds.nodes()?)
}

type Predictor = Box<dyn Fn(usize, &sonoskill::Features) -> sonoskill::Result<(ControlVariable, Option<bool>)>>;

fn predictor(cfg: &ExperimentConfig, a: &PredictArgs) -> Result<(Method, Predictor)> {
    match a.method {
        MethodArg::Gmm => {
            let model = GmmModel::load(&a.model)?;
            if cfg.bounds != sonoskill::stability::BoundsMode::Analytic {
                bail!("empirical bounds need training nodes; use the experiment command");
            }
            let p = SkillPredictor::new(model, a.sigma, !a.no_adapt)?;
            Ok((
                Method::Gmm { sigma: a.sigma },
                Box::new(move |_, v| {
                    let r = p.predict(v)?;
                    Ok((r.control, Some(r.verdict.stable)))
                }),
            ))
        }
        MethodArg::Mc => {
            let (mlp, bounds) = load_mc(&a.model)?;
            let n = a.samples;
            let cfg = cfg.clone();
            Ok((
                Method::Mc { samples: n },
                Box::new(move |i, v| {
                    let cands = mc_candidates(&bounds, n, mc_frame_seed(&cfg, i))?;
                    let (best, _) = best_candidate(&mlp, v, &cands)?;
                    Ok((ControlVariable::unflatten(&cands[best])?, None))
                }),
            ))
        }
    }
}

fn predict(cli: &Cli, cfg: &ExperimentConfig, a: &PredictArgs) -> Result<()> {
    let nodes = test_nodes(a)?;
    let (_, p) = predictor(cfg, a)?;
    let mut out = String::from("frame,qw,qx,qy,qz,fx,fy,fz,tx,ty,tz,stable\n");
    for (i, n) in nodes.iter().enumerate() {
        let (c, stable) = p(i, &n.v)?;
        let vals: Vec<String> = c.flatten().iter().map(|x| x.to_string()).collect();
        let s = stable.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!("{i},{},{s}\n", vals.join(",")));
    }
    match &cli.out {
        Some(path) => write_file(path, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn eval(cli: &Cli, cfg: &ExperimentConfig, a: &PredictArgs) -> Result<()> {
    let nodes = evenly_spaced(&test_nodes(a)?, cfg.eval_max_frames);
    let (method, p) = predictor(cfg, a)?;
    let task = a.task.clone().unwrap_or_else(|| "all".into());
    let report = evaluate(method, &task, &nodes, |i, v| p(i, v))?;
    let reports = vec![report];
    print!("{}", summary(&reports));
    if let Some(path) = &cli.out {
        write_file(path, &to_csv(&reports))?;
    }
    Ok(())
}

fn experiment(cli: &Cli, mut cfg: ExperimentConfig, a: &ExperimentArgs) -> Result<()> {
    for o in &a.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not key=value"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(t) = &a.tasks {
        cfg.set("eval.tasks", t)?;
    }
    if a.no_adapt {
        cfg.adapt = false;
    }
    cfg.validate()?;
    if a.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let reports = run_experiment(&cfg, &mut |m| log(m))?;
    let out = out_path(cli, "results");
    write_reports(&out, &reports, cfg.write_frames)?;
    write_file(&out.join("config.txt"), &cfg.to_text())?;
    print!("{}", summary(&reports));
    log(&format!("wrote {}", out.display()));
    Ok(())
}
