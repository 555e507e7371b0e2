//! Command-line front end: argument parsing, output directory, run log and
//! command dispatch.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::contrastive::{initial_params, pretrain_params};
use crate::error::{Error, Result};
use crate::graph::GraphDataset;
use crate::numerics::Checkpoint;
use crate::pipelines::{
    aug_grid, embed_dataset, finetune, gradient_suite, linear_probe, loss_curve_compare, pattern_sweep,
    strength_sweep, train_from_scratch, write_curves_csv, write_json, write_matrix_csv, write_table_csv,
    EvalReport,
};
use crate::ModelParams;

/// Environment variable overriding the output directory.
pub const OUTPUT_DIR_ENV: &str = "GRAPHCL_OUTPUT_DIR";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
const DEFAULT_OUTPUT_DIR: &str = "graphcl-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "graphcl", version, about = "Graph contrastive learning toolkit")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; takes precedence over GRAPHCL_OUTPUT_DIR and the config.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Upper bound on concurrently running cells (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Contrastive pretraining; writes a checkpoint and the loss curve.
    Pretrain,
    /// Finetune a pretrained checkpoint with k-fold evaluation.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Supervised training from a random initialization.
    Scratch,
    /// Graph embeddings of the dataset.
    Embed {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Linear probe on frozen embeddings.
    Probe {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy gains over all augmentation pairs.
    AugGrid,
    /// Accuracy against augmentation ratio.
    StrengthSweep,
    /// Accuracy against degree-bias exponent.
    PatternSweep,
    /// Loss curves of several augmentation pairs.
    LossCompare,
    /// Finite-difference check of every differentiable component.
    GradCheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Scratch => "scratch",
            Command::Embed { .. } => "embed",
            Command::Probe { .. } => "probe",
            Command::AugGrid => "aug-grid",
            Command::StrengthSweep => "strength-sweep",
            Command::PatternSweep => "pattern-sweep",
            Command::LossCompare => "loss-compare",
            Command::GradCheck => "grad-check",
        }
    }

    fn checkpoint(&self) -> Option<&PathBuf> {
        match self {
            Command::Finetune { checkpoint } | Command::Embed { checkpoint } | Command::Probe { checkpoint } => {
                checkpoint.as_ref()
            }
            _ => None,
        }
    }
}

/// Append-only JSON-lines log of one output directory.
pub struct RunLog {
    path: PathBuf,
}

#[derive(Serialize)]
struct LogLine<'a, P: Serialize> {
    timestamp: f64,
    event: &'a str,
    payload: P,
}

impl RunLog {
    pub fn new(dir: &Path) -> Self {
        Self { path: dir.join(RUN_LOG) }
    }

    pub fn event(&self, event: &str, payload: impl Serialize) -> Result<()> {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let mut line = serde_json::to_string(&LogLine { timestamp, event, payload })?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        file.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))
    }
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

fn usage(error: Error) -> Failure {
    Failure { code: EXIT_USAGE, error }
}

fn runtime(error: Error) -> Failure {
    Failure { code: EXIT_RUNTIME, error }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.error);
            failure.code
        }
    }
}

/// Output directory: flag, then environment, then config, then the default.
pub fn output_dir(cli: &Cli, config: &RunConfig) -> PathBuf {
    cli.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

pub fn execute(cli: &Cli) -> std::result::Result<i32, Failure> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path).map_err(usage)?,
        None => RunConfig::default(),
    };
    let name = cli.command.name();
    if let Some(command) = &config.command {
        if command != name {
            log::warn!("config names command {command}, running {name}");
        }
    }
    if let Some(checkpoint) = cli.command.checkpoint() {
        config.checkpoint = Some(checkpoint.clone());
    }
    config.command = Some(name.to_string());
    config.validate().map_err(usage)?;

    let dir = output_dir(cli, &config);
    std::fs::create_dir_all(&dir).map_err(|e| runtime(Error::io(&dir, e)))?;
    let effective = config.to_toml().map_err(usage)?;
    let echo = dir.join(EFFECTIVE_CONFIG);
    std::fs::write(&echo, effective).map_err(|e| runtime(Error::io(&echo, e)))?;

    let log = RunLog::new(&dir);
    log.event("start", serde_json::json!({ "command": name, "workers": cli.workers, "seed": config.seed }))
        .map_err(runtime)?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| usage(Error::InvalidArgument(e.to_string())))?;
    let outcome = pool.install(|| dispatch(&cli.command, &config, &dir, &log));
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(code) => {
            log.event("finish", serde_json::json!({ "exit_code": code, "wall_clock_seconds": seconds }))
                .map_err(runtime)?;
            Ok(code)
        }
        Err(error) => {
            let _ = log.event("error", serde_json::json!({ "message": error.to_string(), "wall_clock_seconds": seconds }));
            Err(match error {
                Error::Config(_) => usage(error),
                _ => runtime(error),
            })
        }
    }
}

fn load_dataset(config: &RunConfig, log: &RunLog) -> Result<GraphDataset> {
    let dataset = config.dataset.load()?;
    log.event(
        "dataset",
        serde_json::json!({
            "name": dataset.name(),
            "graphs": dataset.len(),
            "classes": dataset.num_classes(),
            "feature_dim": dataset.feature_dim(),
            "category": dataset.category(),
        }),
    )?;
    Ok(dataset)
}

fn load_params(config: &RunConfig, dataset: &GraphDataset, required: bool) -> Result<ModelParams> {
    match &config.checkpoint {
        Some(path) => ModelParams::from_checkpoint(&Checkpoint::load(path)?),
        None if required => Err(Error::Config("this command needs a checkpoint (--checkpoint or `checkpoint` key)".into())),
        None => {
            log::warn!("no checkpoint given; using a randomly initialized encoder");
            initial_params(dataset, &config.encoder, config.seed)
        }
    }
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport, log: &RunLog) -> Result<()> {
    report.write_csv(&dir.join(format!("{stem}.csv")))?;
    report.write_json(&dir.join(format!("{stem}.json")))?;
    log.event(
        "report",
        serde_json::json!({
            "protocol": report.protocol,
            "mean": report.mean,
            "std": report.std,
            "wall_clock_seconds": report.wall_clock_seconds,
        }),
    )?;
    println!("{}: mean accuracy {:.4} ± {:.4}", report.protocol, report.mean, report.std);
    Ok(())
}

fn dispatch(command: &Command, config: &RunConfig, dir: &Path, log: &RunLog) -> Result<i32> {
    let experiment = config.experiment();
    match command {
        Command::GradCheck => {
            let g = &config.gradcheck;
            let cases = gradient_suite(g.draws, g.step, g.tolerance, config.seed)?;
            let rows: Vec<Vec<String>> = cases
                .iter()
                .map(|c| {
                    vec![
                        c.component.as_str().to_string(),
                        c.draw.to_string(),
                        c.max_rel_error.to_string(),
                        c.pass.to_string(),
                    ]
                })
                .collect();
            write_table_csv(&dir.join("gradcheck.csv"), &["component", "draw", "max_rel_error", "pass"], &rows)?;
            let max = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
            let pass = cases.iter().all(|c| c.pass);
            write_json(
                &dir.join("gradcheck.json"),
                &serde_json::json!({ "max_rel_error": max, "tolerance": g.tolerance, "pass": pass, "cases": cases }),
            )?;
            println!("max relative error {max:e}: {}", if pass { "PASS" } else { "FAIL" });
            return Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED });
        }
        Command::Pretrain => {
            let dataset = load_dataset(config, log)?;
            let params = initial_params(&dataset, &experiment.encoder, config.seed)?;
            let (params, curve) = pretrain_params(&dataset, &experiment.pretrain, params)?;
            params.to_checkpoint().save(&dir.join("checkpoint.json"))?;
            curve.write_csv(&dir.join("loss_curve.csv"))?;
            write_json(&dir.join("pretrain.json"), &curve)?;
            println!("pretrained {} epochs, final loss {:.6}", curve.len(), curve.last().unwrap_or(f64::NAN));
        }
        Command::Finetune { .. } => {
            let dataset = load_dataset(config, log)?;
            let params = load_params(config, &dataset, true)?;
            let report = finetune(&params, &dataset, &experiment.split, &experiment.finetune)?;
            write_report(dir, "finetune", &report, log)?;
        }
        Command::Scratch => {
            let dataset = load_dataset(config, log)?;
            let report =
                train_from_scratch(&dataset, &experiment.encoder, config.seed, &experiment.split, &experiment.finetune)?;
            write_report(dir, "scratch", &report, log)?;
        }
        Command::Embed { .. } => {
            let dataset = load_dataset(config, log)?;
            let params = load_params(config, &dataset, false)?;
            let h = embed_dataset(&params, &dataset)?;
            let mut header = vec!["graph".to_string(), "label".to_string()];
            header.extend((0..h.cols()).map(|c| format!("h{c}")));
            let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
            let rows: Vec<Vec<String>> = dataset
                .graphs()
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let label = g.label().map_or(String::new(), |l| l.to_string());
                    [i.to_string(), label].into_iter().chain(h.row(i).iter().map(f64::to_string)).collect()
                })
                .collect();
            write_table_csv(&dir.join("embeddings.csv"), &header_refs, &rows)?;
            println!("wrote {} embeddings of dimension {}", h.rows(), h.cols());
        }
        Command::Probe { .. } => {
            let dataset = load_dataset(config, log)?;
            let params = load_params(config, &dataset, false)?;
            let h = embed_dataset(&params, &dataset)?;
            let report = linear_probe(&h, &dataset.labels()?, config.probe.folds, config.seed)?;
            write_report(dir, "probe", &report, log)?;
        }
        Command::AugGrid => {
            let dataset = load_dataset(config, log)?;
            let grid = aug_grid(&dataset, &config.sweep.kinds, &experiment, &config.sweep_seeds())?;
            grid.write_matrix_csv(&dir.join("aug_grid.csv"))?;
            write_matrix_csv(&dir.join("aug_grid_accuracy.csv"), &grid.labels, &grid.accuracies)?;
            write_json(&dir.join("aug_grid.json"), &grid)?;
            println!("{} grid cells, scratch accuracy {:.4}", grid.cells.len(), grid.scratch_accuracy);
        }
        Command::StrengthSweep => {
            let dataset = load_dataset(config, log)?;
            let report = strength_sweep(
                &dataset,
                config.sweep.strength_kind,
                &config.sweep.ratios,
                &experiment,
                &config.sweep_seeds(),
            )?;
            report.write_csv(&dir.join("strength_sweep.csv"))?;
            write_json(&dir.join("strength_sweep.json"), &report)?;
            println!("{} sweep rows", report.rows.len());
        }
        Command::PatternSweep => {
            let dataset = load_dataset(config, log)?;
            let report = pattern_sweep(
                &dataset,
                config.sweep.pattern_kind,
                &config.sweep.alphas,
                &experiment,
                &config.sweep_seeds(),
            )?;
            report.write_csv(&dir.join("pattern_sweep.csv"))?;
            write_json(&dir.join("pattern_sweep.json"), &report)?;
            println!("{} sweep rows", report.rows.len());
        }
        Command::LossCompare => {
            let dataset = load_dataset(config, log)?;
            let curves = loss_curve_compare(&dataset, &config.sweep.pool_pairs(), &experiment, &config.sweep_seeds())?;
            write_curves_csv(&dir.join("loss_curves.csv"), &curves)?;
            for c in &curves {
                let stem: String = c
                    .label()
                    .chars()
                    .map(|ch| if ch.is_ascii_alphanumeric() || ch == '.' || ch == '-' { ch } else { '_' })
                    .collect();
                c.curve.write_csv(&dir.join(format!("loss_{stem}_seed{}.csv", c.seed)))?;
            }
            write_json(&dir.join("loss_compare.json"), &curves)?;
            println!("{} loss curves", curves.len());
        }
    }
    Ok(EXIT_OK)
}
