use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use robustprune::attack::AttackConfig;
use robustprune::data::Dataset;
use robustprune::eval::{attack_outcomes, evaluate, transfer_eval, weight_histogram};
use robustprune::experiments::{
    parse_override, run_experiment, Context, ExperimentConfig, EXPERIMENTS,
};
use robustprune::nn::{Checkpoint, CheckpointMeta, Network};
use robustprune::numerics::Rng;
use robustprune::optim::init_params;
use robustprune::sparsity::{
    concurrent_train_prune, IterationLog, Monitor, Scheme, SparsityConstraint,
};
use robustprune::train::train;

/// Config keys that may be overridden without a dotted path.
const TOP_LEVEL_KEYS: [&str; 3] = ["profile", "output_dir", "seeds"];

#[derive(Parser)]
#[command(
    name = "robustprune",
    version,
    about = "Adversarial training with concurrent ADMM weight pruning",
    after_help = "Config values can be overridden with --section.key=value, e.g. --train.epochs=3."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a dense model from its initialization.
    Train(TrainArgs),
    /// Concurrent adversarial training and pruning.
    Prune(PruneArgs),
    /// Attack a checkpoint and write per-sample outcomes.
    Attack(AttackArgs),
    /// Natural and adversarial accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Cross-model transfer of adversarial examples.
    Transfer(TransferArgs),
    /// Weight histogram with an exact-zero bin.
    Histogram(HistogramArgs),
    /// Run a scripted study: scratch, prune_grid, lottery, init_study,
    /// post_prune or transfer.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Width scale; defaults to the first entry of model.widths.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train on clean inputs even if train_attack is set.
    #[arg(long)]
    natural: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    keep_ratio: f64,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    admm_iters: Option<usize>,
    #[arg(long)]
    sub_epochs: Option<usize>,
    /// Start from this trained checkpoint.
    #[arg(long, conflicts_with = "cold_start")]
    warm_checkpoint: Option<PathBuf>,
    /// Start from a fresh initialization of width --width.
    #[arg(long)]
    cold_start: bool,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split to attack: `test` or `train`.
    #[arg(long, default_value = "test")]
    dataset: String,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// `name=path`, repeated once per model.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HistogramArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    name: String,
    #[command(flatten)]
    config: ConfigArg,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = json!({"error": {"kind": "usage", "message": e.to_string().trim()}});
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    match run(cli, &overrides) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(1)
        }
    }
}

/// Pulls `--a.b=value` (and the few top-level keys) out of the argument list.
fn split_overrides(all: Vec<String>) -> (Vec<String>, Vec<String>) {
    let (mut args, mut overrides) = (Vec::new(), Vec::new());
    for a in all {
        let is_override = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .is_some_and(|(k, _)| k.contains('.') || TOP_LEVEL_KEYS.contains(&k));
        if is_override {
            overrides.push(a);
        } else {
            args.push(a);
        }
    }
    (args, overrides)
}

fn error_record(e: &anyhow::Error) -> serde_json::Value {
    let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
    match e
        .chain()
        .find_map(|c| c.downcast_ref::<robustprune::Error>())
    {
        Some(robustprune::Error::Config { field, message }) => json!({
            "error": {"kind": "config", "field": field, "message": message, "context": chain}
        }),
        Some(robustprune::Error::Parse { offset, message }) => json!({
            "error": {"kind": "parse", "offset": offset, "message": message, "context": chain}
        }),
        Some(err) => {
            json!({"error": {"kind": err.kind(), "message": err.to_string(), "context": chain}})
        }
        None => json!({"error": {"kind": "other", "message": e.to_string(), "context": chain}}),
    }
}

fn load_config(arg: &ConfigArg, overrides: &[String]) -> anyhow::Result<ExperimentConfig> {
    let path = arg
        .config
        .as_ref()
        .ok_or_else(|| robustprune::Error::Config {
            field: "--config".into(),
            message: "this command needs a config file".into(),
        })?;
    let parsed = overrides
        .iter()
        .map(|o| parse_override(o))
        .collect::<robustprune::Result<Vec<_>>>()?;
    let cfg = ExperimentConfig::load(path, &parsed)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(cfg)
}

fn run(cli: Cli, overrides: &[String]) -> anyhow::Result<serde_json::Value> {
    match cli.cmd {
        Cmd::Train(a) => cmd_train(a, overrides),
        Cmd::Prune(a) => cmd_prune(a, overrides),
        Cmd::Attack(a) => cmd_attack(a, overrides),
        Cmd::Eval(a) => cmd_eval(a, overrides),
        Cmd::Transfer(a) => cmd_transfer(a, overrides),
        Cmd::Histogram(a) => cmd_histogram(a),
        Cmd::Experiment(a) => {
            if !EXPERIMENTS.contains(&a.name.as_str()) {
                return Err(anyhow!(robustprune::Error::Config {
                    field: "experiment".into(),
                    message: format!(
                        "unknown experiment `{}`; expected one of {}",
                        a.name,
                        EXPERIMENTS.join(", ")
                    ),
                }));
            }
            let cfg = load_config(&a.config, overrides)?;
            let table = run_experiment(&a.name, &cfg)?;
            Ok(json!({"experiment": a.name, "table": table}))
        }
    }
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs, overrides: &[String]) -> anyhow::Result<serde_json::Value> {
    let cfg = load_config(&a.config, overrides)?;
    let width = a.width.unwrap_or(cfg.model.widths[0]);
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let adversarial = !a.natural && cfg.train_attack.is_some();
    let out = a
        .out
        .unwrap_or_else(|| cfg.output_dir.join(format!("train_w{width}_s{seed}.ckpt")));
    let mut ctx = Context::new(cfg)?;
    let start = ctx.initial(width, seed)?;
    let net = Network::new(start.spec.clone())?;
    let mut params = start.params.clone();
    let tcfg = ctx.cfg.train_config(adversarial, seed);
    let history = train(
        &net,
        &mut params,
        &ctx.train,
        &tcfg,
        &Rng::new(seed),
        None,
        |_, _| Ok(()),
    )?;
    let meta = CheckpointMeta {
        seed,
        epoch: history.len(),
        training: if adversarial {
            "adversarial"
        } else {
            "natural"
        }
        .into(),
        ..CheckpointMeta::default()
    };
    let ckpt = Checkpoint::new(start.spec, params, meta);
    ckpt.save(&out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in &history {
        w.serialize(h)?;
    }
    let log = with_suffix(&out, ".epochs.csv");
    write_text(&log, &String::from_utf8(w.into_inner()?)?)?;
    let report = ctx.evaluate(&ckpt, seed)?;
    Ok(json!({
        "checkpoint": out,
        "epochs": log,
        "natural_accuracy": report.natural_accuracy,
        "adversarial_accuracy": report.adversarial_accuracy,
    }))
}

fn cmd_prune(a: PruneArgs, overrides: &[String]) -> anyhow::Result<serde_json::Value> {
    let mut cfg = load_config(&a.config, overrides)?;
    if let Some(r) = a.rho {
        cfg.prune.rho = r;
    }
    if let Some(k) = a.admm_iters {
        cfg.prune.iterations = k;
    }
    if let Some(s) = a.sub_epochs {
        cfg.prune.sub_epochs = s;
    }
    cfg.validate()?;
    let scheme = a.scheme.unwrap_or(cfg.prune.schemes[0]);
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let ctx = Context::new(cfg)?;
    let start = match (&a.warm_checkpoint, a.cold_start) {
        (Some(p), _) => Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?,
        (None, true) => {
            let w = a.width.unwrap_or(ctx.cfg.model.widths[0]);
            let spec = robustprune::nn::build_network(ctx.cfg.model.family, w)?;
            let params = init_params(&spec, ctx.cfg.model.init, &Rng::new(seed));
            Checkpoint::new(spec, params, CheckpointMeta::default())
        }
        (None, false) => {
            return Err(anyhow!(robustprune::Error::Config {
                field: "--warm-checkpoint".into(),
                message: "pass --warm-checkpoint <path> or --cold-start".into(),
            }))
        }
    };
    let c = SparsityConstraint::uniform(&start.params, scheme, a.keep_ratio)?;
    let out = a.out.unwrap_or_else(|| {
        ctx.cfg
            .output_dir
            .join(format!("prune_{scheme}_k{:.4}_s{seed}.ckpt", a.keep_ratio))
    });
    let tcfg = ctx.cfg.prune_train_config(seed, ctx.cfg.retrain_epochs());
    let monitor = Monitor {
        data: &ctx.test,
        attack: ctx.cfg.eval_attack,
        seed: ctx.eval_rng(seed).seed(),
    };
    let mut rows: Vec<IterationLog> = Vec::new();
    let outcome = concurrent_train_prune(
        &start,
        &c,
        &ctx.cfg.admm(),
        &tcfg,
        &ctx.train,
        &Rng::new(seed),
        Some(monitor),
        |l| rows.push(l.clone()),
    )?;
    outcome.checkpoint.save(&out)?;
    let log = with_suffix(&out, ".admm.csv");
    let names: Vec<String> = rows
        .first()
        .map(|r| r.residuals.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(IterationLog::csv_header(&names))?;
    for r in &rows {
        w.write_record(r.csv_row())?;
    }
    write_text(&log, &String::from_utf8(w.into_inner()?)?)?;
    let report = ctx.evaluate(&outcome.checkpoint, seed)?;
    Ok(json!({
        "checkpoint": out,
        "iterations": log,
        "natural_accuracy": report.natural_accuracy,
        "adversarial_accuracy": report.adversarial_accuracy,
    }))
}

fn pick_split<'a>(ctx: &'a Context, name: &str) -> anyhow::Result<&'a Dataset> {
    match name {
        "test" => Ok(&ctx.test),
        "train" => Ok(&ctx.train),
        other => Err(anyhow!(robustprune::Error::Config {
            field: "--dataset".into(),
            message: format!("expected `train` or `test`, got `{other}`"),
        })),
    }
}

fn cmd_attack(a: AttackArgs, overrides: &[String]) -> anyhow::Result<serde_json::Value> {
    let cfg = load_config(&a.config, overrides)?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let ctx = Context::new(cfg)?;
    let ds = pick_split(&ctx, &a.dataset)?;
    let base = ctx.cfg.eval_attack;
    let attack = AttackConfig {
        epsilon: a.epsilon.unwrap_or(base.epsilon),
        step_size: a.alpha.unwrap_or(base.step_size),
        steps: a.steps.unwrap_or(base.steps),
        random_start: base.random_start,
    };
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let net = Network::new(ckpt.spec.clone())?;
    let outcomes = attack_outcomes(&net, &ckpt.params, ds, &attack, &ctx.eval_rng(seed))?;
    let out = a
        .out
        .unwrap_or_else(|| ctx.cfg.output_dir.join("attack.csv"));
    let mut w = csv::Writer::from_writer(Vec::new());
    for o in &outcomes {
        w.serialize(o)?;
    }
    write_text(&out, &String::from_utf8(w.into_inner()?)?)?;
    let success = outcomes.iter().filter(|o| o.success).count();
    Ok(json!({
        "samples": outcomes.len(),
        "success_rate": 100.0 * success as f64 / outcomes.len().max(1) as f64,
        "out": out,
    }))
}

fn cmd_eval(a: EvalArgs, overrides: &[String]) -> anyhow::Result<serde_json::Value> {
    let cfg = load_config(&a.config, overrides)?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let ctx = Context::new(cfg)?;
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let report = evaluate(&ckpt, &ctx.test, &ctx.cfg.eval_attack, &ctx.eval_rng(seed))?;
    let value = serde_json::to_value(&report)?;
    if let Some(out) = &a.out {
        write_text(out, &serde_json::to_string_pretty(&value)?)?;
    }
    Ok(value)
}

fn cmd_transfer(a: TransferArgs, overrides: &[String]) -> anyhow::Result<serde_json::Value> {
    let cfg = load_config(&a.config, overrides)?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let ctx = Context::new(cfg)?;
    let mut models = Vec::new();
    for entry in &a.checkpoints {
        let (name, path) = entry
            .split_once('=')
            .ok_or_else(|| robustprune::Error::Config {
                field: "--checkpoint".into(),
                message: format!("`{entry}` is not of the form name=path"),
            })?;
        let ckpt = Checkpoint::load(path).with_context(|| format!("loading {path}"))?;
        models.push((name.to_string(), ckpt));
    }
    let refs: Vec<(String, &Checkpoint)> = models.iter().map(|(n, c)| (n.clone(), c)).collect();
    let m = transfer_eval(
        &refs,
        &refs,
        &ctx.test,
        &ctx.cfg.eval_attack,
        &ctx.eval_rng(seed),
    )?;
    let out = a
        .out
        .unwrap_or_else(|| ctx.cfg.output_dir.join("transfer_matrix.csv"));
    write_text(&out, &m.to_csv()?)?;
    Ok(json!({
        "out": out,
        "self_attack_fraction": m.self_attack_fraction(),
        "accuracy": m.accuracy,
        "models": m.sources,
    }))
}

fn cmd_histogram(a: HistogramArgs) -> anyhow::Result<serde_json::Value> {
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let h = weight_histogram(&ckpt.params, a.bins)?;
    let out = a
        .out
        .unwrap_or_else(|| with_suffix(&a.checkpoint, ".hist.csv"));
    write_text(&out, &h.to_csv()?)?;
    Ok(json!({"out": out, "zero_fraction": h.zero_fraction()}))
}
