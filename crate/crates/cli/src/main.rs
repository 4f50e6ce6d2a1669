//! `clfa`: train, evaluate, probe, export, synthesize and report.
//!
//! Every failure exits nonzero with one `kind: message` line on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use clfa_core::data::{load_folder_dataset, Dataset, LoadOptions, Split};
use clfa_core::eval::{evaluate, leave_one_out, load_domains, load_severity_targets};
use clfa_core::experiment::shift_data;
use clfa_core::probe::split_indices;
use clfa_core::trainer::{load_model, RunDir, FINAL_CHECKPOINT};
use clfa_core::{
    export_embeddings, linear_probe, write_report, Error, ProbeTarget, Protocol, ReportOptions, Result, StdMode, Strategy,
    SyntheticFactorSpec, TrainConfig, Trainer,
};

/// Model selection used when a training-domain validation split exists.
const SELECTION: &str = "training-domain validation (20% per-class split of the source data, early stopping)";

#[derive(Debug, Parser)]
#[command(name = "clfa", version, about = "Causal latent feature augmentation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a folder dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on target datasets and append a record to the run.
    Eval(EvalArgs),
    /// Fit a linear probe on frozen features.
    Probe(ProbeArgs),
    /// Write frozen features to CSV.
    Export(ExportArgs),
    /// Write the synthetic controllable-factor dataset as folders.
    Synth(SynthArgs),
    /// Summarize evaluation records over runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML config; without it the `--profile` defaults apply.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Profile used when no config file is given.
    #[arg(long, default_value = "synthetic")]
    profile: String,
    /// Dataset root: `<class>/<images>`, or `train/`, `val/` splits of that layout.
    #[arg(long)]
    data: PathBuf,
    /// Run directory. With several seeds each run goes to `<out>/seed_<s>`.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated strategy names restricting the transform bank.
    #[arg(long, value_delimiter = ',')]
    transforms: Option<Vec<String>>,
    #[arg(long)]
    log_provenance: bool,
    /// Overrides `max_iters`.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Comma-separated seeds; overrides the config seed and `CLFA_SEED`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Treat `--data` as `<domain>/<class>/...`, train on every other domain
    /// and evaluate on this one.
    #[arg(long)]
    holdout: Option<String>,
    /// Continue from this checkpoint with its stored config; `--config`,
    /// `--profile`, `--transforms` and `--seeds` are ignored.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Target roots. For `severity-sweep` each root holds `<level>/<corruption>/<class>/`.
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<PathBuf>,
    #[arg(long, default_value = "single-dg")]
    protocol: String,
    /// Run directory receiving `records.jsonl`; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// fc, fb or full.
    #[arg(long)]
    target: String,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML with synthetic dataset keys; defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Population standard deviation instead of the sample one.
    #[arg(long)]
    population: bool,
    /// Also draw `loss_curve.svg` from the runs' metrics.
    #[arg(long)]
    loss_curve: bool,
}

fn load_opts(cfg: &TrainConfig) -> LoadOptions {
    LoadOptions { image_size: cfg.model.image_size, channels: cfg.model.channels }
}

/// Loads `root`, preferring `root/test` when present.
fn load_target(root: &Path, opts: LoadOptions) -> Result<(String, Dataset)> {
    let ds = load_folder_dataset(root, Split::Test, opts)?;
    let name = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| root.display().to_string());
    Ok((name, ds))
}

/// Per-class 80/20 split; the 20% part validates.
fn split_validation(ds: &Dataset) -> Result<(Dataset, Dataset)> {
    let labels: Vec<usize> = ds.samples().iter().map(|s| s.label).collect();
    let (tr, va) = split_indices(&labels, ds.num_classes())?;
    let pick = |idx: &[usize], name: String| {
        Dataset::new(ds.class_names().to_vec(), idx.iter().map(|&i| ds.samples()[i].clone()).collect(), name)
    };
    Ok((pick(&tr, ds.name().to_string())?, pick(&va, format!("{}-val", ds.name()))?))
}

fn train(a: TrainArgs) -> Result<()> {
    let resumed = a.resume.as_deref().map(Trainer::from_checkpoint).transpose()?;
    let mut cfg = match (&resumed, &a.config) {
        (Some(t), _) => t.config().clone(),
        (None, Some(p)) => TrainConfig::load(p)?,
        (None, None) => {
            let mut c = TrainConfig::profile(&a.profile)?;
            c.apply_env()?;
            c
        }
    };
    if resumed.is_none() {
        if let Some(names) = &a.transforms {
            let parsed = names.iter().map(|n| Strategy::from_str(n.trim())).collect::<Result<Vec<_>>>()?;
            cfg.transforms = cfg.transforms.with_enabled(&parsed);
        }
    }
    // a resumed run keeps its budget, so the schedule stays the same
    let until = a.max_iters.unwrap_or(cfg.max_iters);
    if resumed.is_none() {
        cfg.max_iters = until;
    } else if until > cfg.max_iters {
        return Err(Error::Argument(format!("--max-iters {until} exceeds the checkpoint's budget of {}", cfg.max_iters)));
    }
    cfg.log_provenance |= a.log_provenance;
    cfg.validate()?;

    let opts = load_opts(&cfg);
    let (train_ds, val_ds, held_out) = match &a.holdout {
        Some(domain) => {
            let domains = load_domains(&a.data, opts)?;
            let (union, test) = leave_one_out(&domains, domain)?;
            let (tr, va) = split_validation(&union)?;
            (tr, Some(va), Some((domain.clone(), test.clone())))
        }
        None => {
            let tr = load_folder_dataset(&a.data, Split::Train, opts)?;
            let va = if a.data.join("val").is_dir() { Some(load_folder_dataset(&a.data, Split::Val, opts)?) } else { None };
            (tr, va, None)
        }
    };

    let seeds = match (&resumed, &a.seeds) {
        (None, Some(s)) => s.clone(),
        _ => vec![cfg.seed],
    };
    let mut resumed = resumed;
    for &seed in &seeds {
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let out = if seeds.len() > 1 { a.out.join(format!("seed_{seed}")) } else { a.out.clone() };
        let dir = RunDir::create(&out, &run_cfg)?;
        let mut trainer = match resumed.take() {
            Some(t) => t,
            None => Trainer::new(run_cfg)?,
        };
        let reports = trainer.run(&train_ds, val_ds.as_ref(), Some(&dir), until)?;
        let last = reports.last().map(|r| r.losses.total).unwrap_or(f64::NAN);
        let ckpt = out.join(FINAL_CHECKPOINT);
        if let Some((name, test)) = &held_out {
            let mut rec = evaluate(trainer.model(), &[(name.clone(), test.clone())], Protocol::LeaveOneOut, seed, &ckpt)?;
            rec.selection = Some(SELECTION.into());
            rec.append_to(&out)?;
        }
        println!("{}", serde_json::json!({ "run": out, "seed": seed, "iterations": trainer.iteration(), "final_total_loss": last }));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let protocol = Protocol::from_str(&a.protocol)?;
    let (model, cfg, _) = load_model(&a.checkpoint)?;
    let opts = load_opts(&cfg);
    let mut targets = Vec::new();
    for root in &a.targets {
        match protocol {
            Protocol::SeveritySweep => targets.extend(load_severity_targets(root, opts)?),
            _ => targets.push(load_target(root, opts)?),
        }
    }
    let mut rec = evaluate(&model, &targets, protocol, cfg.seed, &a.checkpoint)?;
    if protocol == Protocol::LeaveOneOut {
        rec.selection = Some(SELECTION.into());
    }
    let out = a.out.clone().unwrap_or_else(|| a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&out).map_err(|e| Error::Argument(format!("cannot create {}: {e}", out.display())))?;
    rec.append_to(&out)?;
    println!("{}", serde_json::to_string(&rec)?);
    Ok(())
}

fn probe(a: ProbeArgs) -> Result<()> {
    let target = ProbeTarget::from_str(&a.target)?;
    let (model, cfg, _) = load_model(&a.checkpoint)?;
    let (_, ds) = load_target(&a.data, load_opts(&cfg))?;
    println!("{}", serde_json::to_string(&linear_probe(&model, &ds, target)?)?);
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let (model, cfg, _) = load_model(&a.checkpoint)?;
    let (_, ds) = load_target(&a.data, load_opts(&cfg))?;
    let rows = export_embeddings(&model, &ds, &a.out)?;
    println!("{}", serde_json::json!({ "out": a.out, "rows": rows, "columns": 3 + cfg.model.feature_dim }));
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec: SyntheticFactorSpec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Argument(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticFactorSpec::default(),
    };
    spec.validate()?;
    let (train, test) = shift_data(&spec)?;
    train.write_folder(&a.out.join("train"))?;
    test.write_folder(&a.out.join("test"))?;
    println!("{}", serde_json::json!({ "out": a.out, "train": train.len(), "test": test.len() }));
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let opts = ReportOptions {
        std_mode: if a.population { StdMode::Population } else { StdMode::Sample },
        loss_curve: a.loss_curve,
    };
    let rows = write_report(&a.runs, &a.out, &opts)?;
    println!("{}", serde_json::json!({ "out": a.out, "rows": rows.len() }));
    Ok(())
}

fn fail(kind: &str, msg: &str) -> ExitCode {
    eprintln!("{kind}: {}", msg.replace('\n', " "));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail("usage", first);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Probe(a) => probe(a),
        Command::Export(a) => export(a),
        Command::Synth(a) => synth(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
