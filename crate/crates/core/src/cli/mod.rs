//! The `occlbench` command line: generate, train, predict, evaluate, ablate and report.
//!
//! Every command writes its outputs under one directory together with a
//! `manifest.json` that carries the hash of the effective configuration.
//! Exit codes: 0 success, 2 invalid input, 3 runtime failure.

pub mod config;
pub mod plot;
pub mod tables;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occlcon::MarginConfig;
use crate::pandata::json::to_canonical_string;
use crate::pandata::{read_dataset, read_dataset_with_sidecar, Layout};
use crate::paneval::{stratified_report, EvalOptions, StratifiedReport};
use crate::provenance::config_hash;
use crate::scenegen::{generate_dataset, DatasetManifest};
use crate::trainhar::{predict_dataset, train, Checkpoint, Mode, TrainConfig, TrainOutcome};
pub use config::{AblationGrid, ExperimentConfig};
pub use tables::{format_delta, AblationRow, RunSummary};

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const EPOCHS: &str = "epochs.json";

#[derive(Debug, Parser)]
#[command(name = "occlbench", version, about = "Occlusion-stratified panoptic benchmarking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with occlusion annotations.
    Generate(GenerateArgs),
    /// Train the toy panoptic model.
    Train(TrainArgs),
    /// Write scored panoptic predictions of a checkpoint for a dataset.
    Predict(PredictArgs),
    /// Evaluate predictions per occlusion level.
    Evaluate(EvaluateArgs),
    /// Train and evaluate once per (tau_lh, tau_m) grid cell.
    Ablate(AblateArgs),
    /// Compare baseline and contrastive training runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Experiment TOML; its [generator] section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides generator.num_images.
    #[arg(long)]
    pub num_images: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOverrides {
    /// Experiment TOML; its [train] section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub val_dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lambda")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: TrainOverrides,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub tau_lh: Option<f64>,
    #[arg(long)]
    pub tau_m: Option<f64>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub min_area: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Occlusion sidecar; defaults to the one inside the ground-truth root.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip AP; the AP column is rendered as n/a.
    #[arg(long)]
    pub no_ap: bool,
    /// Count predicted pixels on void ground truth against IoU.
    #[arg(long)]
    pub keep_void: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: TrainOverrides,
    /// Cells as `tau_lh:tau_m` pairs separated by commas; defaults to the config's [ablation] grid.
    #[arg(long)]
    pub grid: Option<AblationGrid>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory whose subdirectories are training runs.
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
}

impl RunManifest {
    fn new<T: Serialize>(command: &str, config: &T, outputs: &[&str]) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: config_hash(config),
            config: serde_json::to_value(config).expect("configs serialize"),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            summary: None,
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
    }

    fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = to_canonical_string(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &(text + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<DatasetManifest> {
    let mut cfg = ExperimentConfig::load(args.config.as_deref())?.generator;
    if let Some(n) = args.num_images {
        cfg.num_images = n;
    }
    cfg.validate()?;
    let manifest = generate_dataset(&cfg, args.seed, &args.out)?;
    let c = manifest.counts;
    println!("low {}  mid {}  high {}  (checksum {})", c.low, c.mid, c.high, manifest.checksum);
    Ok(manifest)
}

fn train_config(o: &TrainOverrides) -> Result<(TrainConfig, ExperimentConfig)> {
    let exp = ExperimentConfig::load(o.config.as_deref())?;
    let mut cfg = exp.train.clone();
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(d) = &o.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(v) = &o.val_dataset {
        cfg.val_dataset = Some(v.clone());
    }
    if let Some(e) = o.epochs {
        cfg.epochs = e;
    }
    if let Some(l) = o.lambda {
        cfg.margins.lambda_weight = l;
    }
    Ok((cfg, exp))
}

/// Writes checkpoint, step log, epoch metrics, held-out report and manifest into `dir`.
pub fn write_train_run(dir: &Path, cfg: &TrainConfig, out: &TrainOutcome) -> Result<RunSummary> {
    create_dir(dir)?;
    out.checkpoint.save(&dir.join(CHECKPOINT))?;
    write_text(&dir.join(TRAIN_LOG), &out.log_jsonl())?;
    write_json(&dir.join(EPOCHS), &out.epochs)?;
    out.validation.write(dir)?;
    let summary = RunSummary::new(cfg, out);
    let mut manifest = RunManifest::new(
        "train",
        cfg,
        &[CHECKPOINT, TRAIN_LOG, EPOCHS, "report.csv", "report.txt"],
    );
    manifest.summary = Some(summary.clone());
    manifest.write(dir)?;
    Ok(summary)
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunSummary> {
    let (mut cfg, _) = train_config(&args.common)?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(t) = args.tau_lh {
        cfg.margins.tau_lh = t;
    }
    if let Some(t) = args.tau_m {
        cfg.margins.tau_m = t;
    }
    cfg.validate()?;
    let outcome = train(&cfg)?;
    let summary = write_train_run(&args.out, &cfg, &outcome)?;
    print!("{}", outcome.validation.to_text());
    match outcome.separation {
        Some(s) => println!("best epoch {}  separation {s:.4}", outcome.best_epoch),
        None => println!("best epoch {}  separation n/a", outcome.best_epoch),
    }
    Ok(summary)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let dataset = read_dataset(&args.data)?;
    predict_dataset(&checkpoint, &dataset, &args.out, args.min_area)?;
    #[derive(Serialize)]
    struct PredictConfig<'a> {
        checkpoint: &'a Path,
        checkpoint_config_hash: &'a str,
        data: &'a Path,
        min_area: usize,
    }
    let cfg = PredictConfig {
        checkpoint: &args.checkpoint,
        checkpoint_config_hash: &checkpoint.config_hash,
        data: &args.data,
        min_area: args.min_area,
    };
    RunManifest::new("predict", &cfg, &["panoptic.json", "panoptic"]).write(&args.out)?;
    println!("wrote predictions for {} images to {}", dataset.len(), args.out.display());
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<StratifiedReport> {
    let pred = read_dataset(&args.pred)?;
    let layout = Layout::detect(&args.gt)?;
    let gt = read_dataset_with_sidecar(&layout, Some(args.sidecar.as_deref().unwrap_or(&layout.sidecar)))?;
    let opts = EvalOptions {
        ignore_void: !args.keep_void,
        compute_ap: !args.no_ap,
    };
    let report = stratified_report(&pred, &gt, &opts)?;
    create_dir(&args.out)?;
    report.write(&args.out)?;
    #[derive(Serialize)]
    struct EvaluateConfig<'a> {
        pred: &'a Path,
        gt: &'a Path,
        sidecar: Option<&'a Path>,
        options: EvalOptions,
    }
    let cfg = EvaluateConfig {
        pred: &args.pred,
        gt: &args.gt,
        sidecar: args.sidecar.as_deref(),
        options: opts,
    };
    RunManifest::new("evaluate", &cfg, &["report.csv", "report.txt"]).write(&args.out)?;
    print!("{}", report.to_text());
    Ok(report)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    let (base, exp) = train_config(&args.common)?;
    let grid = args.grid.clone().unwrap_or(exp.ablation);
    grid.validate()?;
    let configs: Vec<TrainConfig> = grid
        .grid
        .iter()
        .map(|&(tau_lh, tau_m)| TrainConfig {
            mode: Mode::Contrastive,
            margins: MarginConfig {
                tau_lh,
                tau_m,
                ..base.margins
            },
            ..base.clone()
        })
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    create_dir(&args.out)?;
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let name = format!("tau_lh-{}_tau_m-{}", cfg.margins.tau_lh, cfg.margins.tau_m);
        let outcome = train(cfg)?;
        write_train_run(&args.out.join("cells").join(&name), cfg, &outcome)?;
        let all = outcome.validation.all();
        rows.push(AblationRow {
            tau_lh: cfg.margins.tau_lh,
            tau_m: cfg.margins.tau_m,
            pq: all.pq,
            pq_th: all.pq_th,
            pq_st: all.pq_st,
        });
        println!("{name}: done");
    }
    write_text(&args.out.join("ablation.csv"), &tables::ablation_csv(&rows))?;
    let text = tables::ablation_text(&rows);
    write_text(&args.out.join("ablation.txt"), &text)?;
    #[derive(Serialize)]
    struct AblateConfig<'a> {
        train: &'a TrainConfig,
        grid: &'a AblationGrid,
    }
    RunManifest::new("ablate", &AblateConfig { train: &base, grid: &grid }, &["ablation.csv", "ablation.txt", "cells"])
        .write(&args.out)?;
    print!("{text}");
    Ok(rows)
}

/// Training runs found directly under `dir`, in name order.
pub fn collect_runs(dir: &Path) -> Result<Vec<(PathBuf, RunSummary)>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    let mut runs = Vec::new();
    for d in dirs {
        let m = RunManifest::read(&d)?;
        if let (true, Some(summary)) = (m.command == "train", m.summary) {
            runs.push((d, summary));
        }
    }
    Ok(runs)
}

pub fn cmd_report(args: &ReportArgs) -> Result<String> {
    let runs = collect_runs(&args.runs)?;
    let baseline: Vec<&RunSummary> = runs.iter().map(|r| &r.1).filter(|s| s.is_baseline()).collect();
    let contrastive: Vec<&RunSummary> = runs.iter().map(|r| &r.1).filter(|s| !s.is_baseline()).collect();
    if baseline.is_empty() || contrastive.is_empty() {
        return Err(Error::Contract(format!(
            "{} needs at least one baseline and one contrastive training run (found {} and {})",
            args.runs.display(),
            baseline.len(),
            contrastive.len()
        )));
    }
    create_dir(&args.out)?;
    let text = tables::comparison_text(&baseline, &contrastive);
    write_text(&args.out.join("comparison.txt"), &text)?;
    write_text(&args.out.join("comparison.csv"), &tables::comparison_csv(&baseline, &contrastive))?;
    write_text(
        &args.out.join("pq_vs_level.svg"),
        &tables::pq_vs_level_svg(&baseline, &contrastive),
    )?;
    let mut logs = Vec::new();
    for (dir, summary) in &runs {
        logs.push((summary.label(), read_log(&dir.join(TRAIN_LOG))?));
    }
    write_text(&args.out.join("loss_curves.svg"), &tables::loss_curves_svg(&logs))?;
    #[derive(Serialize)]
    struct ReportConfig {
        runs: Vec<PathBuf>,
    }
    let cfg = ReportConfig {
        runs: runs.iter().map(|r| r.0.clone()).collect(),
    };
    RunManifest::new(
        "report",
        &cfg,
        &["comparison.txt", "comparison.csv", "pq_vs_level.svg", "loss_curves.svg"],
    )
    .write(&args.out)?;
    print!("{text}");
    Ok(text)
}

fn read_log(path: &Path) -> Result<Vec<crate::trainhar::StepRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(drop),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a).map(drop),
        Command::Ablate(a) => cmd_ablate(a).map(drop),
        Command::Report(a) => cmd_report(a).map(drop),
    }
}

/// Parses `args` (program name first), runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
