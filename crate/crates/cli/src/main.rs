use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gog::corpus::{generate_toy_corpus, load_corpus, save_corpus, Split, ToyConfig};
use gog::graphs::{build_dialog_graphs, SpatialThresholds};
use gog::model::{Ablations, DecoderMode};
use gog::tensor::{Checkpoint, GradCheckReport};
use gog::train::{full_chain_grad_check, Evaluation, GradCheckDims, LoadedRun, TrainConfig, Trainer};
use gog::{GogError, Result};

#[derive(Parser)]
#[command(name = "gog", version, about = "Graph-over-graph visual dialog model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus (train and val splits).
    GenToy(GenToyArgs),
    /// Dump the relation graphs of every round of a split.
    BuildGraphs(BuildGraphsArgs),
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Rank the candidates of a split with a trained run.
    Eval(EvalArgs),
    /// Summarize a run directory or checkpoint file.
    Inspect(InspectArgs),
    /// Finite-difference check of the full network gradient.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenToyArgs {
    #[arg(long, default_value = "data/toy")]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    dialogs: usize,
    /// Dialogs in the val split; defaults to a fifth of `--dialogs`.
    #[arg(long)]
    val_dialogs: Option<usize>,
    #[arg(long, default_value_t = 3)]
    turns: usize,
    #[arg(long, default_value_t = 5)]
    regions: usize,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
}

#[derive(Args)]
struct BuildGraphsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    question_len: usize,
    /// Spatial thresholds, e.g. `iou=0.3,dist=0.5`.
    #[arg(long, default_value = "iou=0.3,dist=0.5")]
    thresholds: SpatialThresholds,
    #[arg(long)]
    dot: bool,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Ablations by flag or row name, e.g. `h-graph,q-aware` or `w/o I-Graph`.
    #[arg(long)]
    ablate: Option<Ablations>,
    #[arg(long)]
    mode: Option<DecoderMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, base: Option<TrainConfig>) -> Result<TrainConfig> {
        let mut cfg = match (&self.config, base) {
            (Some(p), _) => TrainConfig::load(p)?,
            (None, Some(b)) => b,
            (None, None) => TrainConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| GogError::Config(format!("--set expects key=value, got `{o}`")))?;
            cfg.set(k, v)?;
        }
        if let Some(a) = &self.ablate {
            cfg.ablations = a.clone();
        }
        if let Some(m) = self.mode {
            cfg.decoder_mode = m;
        }
        if let Some(e) = self.epochs {
            cfg.max_epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Continue the run in `--run` from its last checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Run directory holding the checkpoint.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "val")]
    split: Split,
    /// Decoder(s) to rank with; defaults to the run's training mode.
    #[arg(long)]
    mode: Option<DecoderMode>,
    /// Config to check the checkpoint against; the run's snapshot by default.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Run directory or checkpoint file.
    path: PathBuf,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value = "toy")]
    dims: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
}

const GRAD_TOLERANCE: f64 = 1e-4;

fn usage(msg: impl Into<String>) -> GogError {
    GogError::Config(msg.into())
}

fn gen_toy(a: &GenToyArgs) -> Result<()> {
    let cfg = ToyConfig {
        seed: a.seed,
        n_dialogs: a.dialogs,
        turns: a.turns,
        n_regions: a.regions,
        d_v: a.feature_dim,
        ..ToyConfig::default()
    };
    let train = generate_toy_corpus(&cfg)?;
    let val_n = a.val_dialogs.unwrap_or((a.dialogs / 5).max(1));
    let val = generate_toy_corpus(&ToyConfig {
        seed: a.seed.wrapping_add(1_000_003),
        n_dialogs: val_n,
        ..cfg
    })?;
    save_corpus(&a.out, Split::Train, &train.dialogs)?;
    save_corpus(&a.out, Split::Val, &val.dialogs)?;
    println!(
        "wrote {} train and {} val dialogs to {}",
        train.dialogs.len(),
        val.dialogs.len(),
        a.out.display()
    );
    Ok(())
}

fn build_graphs(a: &BuildGraphsArgs) -> Result<()> {
    let limits = gog::corpus::LengthLimits {
        question: a.question_len,
        ..Default::default()
    };
    let corpus = load_corpus(&a.corpus, a.split, limits)?;
    let mut out = String::new();
    for d in &corpus.dialogs {
        for k in 0..d.dialog.rounds.len() {
            let g = build_dialog_graphs(d, k, a.question_len, a.thresholds)?;
            out.push_str(&format!("# {} round {k}\n", d.dialog.image_id));
            for graph in [&g.history, &g.question, &g.image] {
                out.push_str(&if a.dot { graph.to_dot(None) } else { graph.to_text() });
            }
        }
    }
    match &a.out {
        Some(p) => fs::write(p, out).map_err(|e| GogError::io(p, e))?,
        None => print!("{out}"),
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let snapshot = if a.resume {
        Some(TrainConfig::load(&a.run.join("config.txt"))?)
    } else {
        None
    };
    let cfg = a.cfg.resolve(snapshot)?;
    let limits = cfg.limits();
    let train = load_corpus(&a.corpus, Split::Train, limits)?.dialogs;
    let val_path = gog::corpus::split_file(&a.corpus, Split::Val, "dialogs");
    let val = if val_path.is_file() {
        load_corpus(&a.corpus, Split::Val, limits)?.dialogs
    } else {
        Vec::new()
    };
    let mut trainer = if a.resume {
        Trainer::resume(&a.run, cfg, &train, &val)?
    } else {
        let mut t = Trainer::new(cfg, &train, &val)?;
        t.attach_run_dir(&a.run)?;
        t
    };
    println!(
        "training {} rounds ({} val), {} parameters, mode {}, ablations [{}], from epoch {}",
        trainer.train.len(),
        trainer.val.len(),
        trainer.store.num_scalars(),
        trainer.cfg.decoder_mode.name(),
        trainer.cfg.ablations,
        trainer.epoch
    );
    let start = Instant::now();
    trainer.run(|s| {
        let val = s
            .val
            .as_ref()
            .map(|e| format!(" | val {}", e.primary().metrics.summary()))
            .unwrap_or_default();
        println!(
            "epoch {:>3} lr {:.2e} loss {:.4}{val} [{:.1}s]",
            s.epoch,
            s.lr,
            s.loss.total,
            start.elapsed().as_secs_f64()
        );
    })?;
    println!("checkpoint at {}", a.run.join("checkpoint.bin").display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    if !a.run.join("checkpoint.bin").is_file() {
        return Err(usage(format!(
            "no checkpoint in {}; train first or pass --run <dir>",
            a.run.display()
        )));
    }
    let cfg = a.config.as_deref().map(TrainConfig::load).transpose()?;
    let run = LoadedRun::open(&a.run, cfg)?;
    let corpus = load_corpus(&a.corpus, a.split, run.cfg.limits())?;
    let rounds = run.rounds(&corpus.dialogs)?;
    let mode = a.mode.unwrap_or(run.cfg.decoder_mode);
    let eval = run.evaluate(&rounds, mode)?;
    for (name, d) in [("disc", &eval.disc), ("gen", &eval.gen)] {
        if let Some(d) = d {
            println!("{} {name}: {}", a.split.name(), d.metrics.summary());
        }
    }
    for p in run.run.write_dumps(a.split.name(), &eval)? {
        println!("dumps at {}", p.display());
    }
    run.run.log(&eval_log_line(a.split, run.epoch, &eval))?;
    Ok(())
}

fn eval_log_line(split: Split, epoch: usize, eval: &Evaluation) -> serde_json::Value {
    let mut v = eval.to_json();
    v["event"] = "eval".into();
    v["split"] = split.name().into();
    v["epoch"] = epoch.into();
    v
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let ck_path = if a.path.is_dir() {
        a.path.join("checkpoint.bin")
    } else {
        a.path.clone()
    };
    let ck = Checkpoint::load(&ck_path)?;
    println!("checkpoint {}", ck_path.display());
    for (k, v) in &ck.meta {
        println!("  {k}: {v}");
    }
    println!("  parameters: {} tensors, {} scalars", ck.params.len(), ck.params.num_scalars());
    for (name, p) in ck.params.iter() {
        let m = &p.value;
        let rms = (m.sq_norm() / m.data().len().max(1) as f64).sqrt();
        println!("    {name:<28} {:>4}x{:<4} rms {rms:.4}", m.rows(), m.cols());
    }
    if a.path.is_dir() {
        let cfg_path = a.path.join("config.txt");
        if cfg_path.is_file() {
            println!("config {}", cfg_path.display());
            print!("{}", fs::read_to_string(&cfg_path).map_err(|e| GogError::io(&cfg_path, e))?);
        }
        let log = a.path.join("metrics.jsonl");
        if let Ok(text) = fs::read_to_string(&log) {
            if let Some(last) = text.lines().rev().find(|l| l.contains("\"event\":\"epoch\"")) {
                println!("last epoch: {last}");
            }
        }
    }
    Ok(())
}

fn print_report(r: &GradCheckReport, secs: f64) {
    println!("max relative error: {:e}", r.max_relative_error);
    println!(
        "worst: {}[{}] analytic {:e} numeric {:e}",
        r.worst_param, r.worst_index, r.worst_analytic, r.worst_numeric
    );
    for (floor, worst) in &r.worst_by_magnitude {
        println!("  |a|+|n| >= {floor:e}: worst {worst:e}");
    }
    println!("checked {} scalars in {secs:.2}s", r.checked);
}

fn grad_check(a: &GradCheckArgs) -> Result<bool> {
    let dims = match a.dims.as_str() {
        "toy" => GradCheckDims::TOY,
        other => return Err(usage(format!("unknown --dims `{other}`; expected `toy`"))),
    };
    let start = Instant::now();
    let r = full_chain_grad_check(dims, a.seed, a.epsilon)?;
    print_report(&r, start.elapsed().as_secs_f64());
    Ok(r.max_relative_error < GRAD_TOLERANCE)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::GenToy(a) => gen_toy(a)?,
        Command::BuildGraphs(a) => build_graphs(a)?,
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Inspect(a) => inspect(a)?,
        Command::GradCheck(a) => {
            if !grad_check(a)? {
                return Ok(ExitCode::from(4));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
