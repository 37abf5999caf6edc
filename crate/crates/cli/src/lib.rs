//! `visk` command-line tool: dataset collection, teleoperation, training,
//! evaluation, ablations and artifact inspection.
//!
//! Configs are JSON files referenced by path; flags override their
//! top-level scalar fields. Missing files fall back to built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use visk_core::ModalityMask;

mod commands;

pub use commands::{combo_preset, write_report};

#[derive(Debug, Parser)]
#[command(name = "visk", version, about = "Visuotactile imitation learning desk lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect successful scripted demonstrations into a dataset directory.
    CollectScripted(CollectArgs),
    /// Serve the simulator to a teleoperation client and record demonstrations.
    TeleopServe(TeleopArgs),
    /// Train one policy on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out targets.
    Eval(EvalArgs),
    /// Train and evaluate every modality combination over several seeds.
    Ablate(AblateArgs),
    /// Dump one camera stream of a recording as PNGs plus its actions as CSV.
    Replay(ReplayArgs),
    /// Print a saved report as a table.
    Report(ReportArgs),
}

#[derive(Debug, clap::Args)]
pub struct CollectArgs {
    /// Environment config (JSON); defaults when omitted.
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Expert parameters (JSON); defaults when omitted.
    #[arg(long)]
    pub expert: Option<PathBuf>,
    /// Number of successful demonstrations to keep.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Half-width of the direction perturbation, degrees [default: 15 or config].
    #[arg(long)]
    pub theta_max: Option<f64>,
    /// Std of the expert's slot estimate, cm [default: 1 or config].
    #[arg(long)]
    pub estimate_err: Option<f64>,
    /// Collection seed [default: 0 or config].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the held-out target layout kept out of the dataset.
    #[arg(long, default_value_t = visk_core::sim::DEFAULT_EVAL_SEED)]
    pub eval_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct TeleopArgs {
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Half-width of the direction perturbation, degrees.
    #[arg(long, default_value_t = 15.0)]
    pub theta_max: f64,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub bind: String,
    /// Dataset directory for recorded demonstrations.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for scene layout and perturbations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Episodes stop on their own after this many seconds.
    #[arg(long, default_value_t = 60.0)]
    pub max_episode_s: f64,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Dataset directory with `index.json`.
    #[arg(long)]
    pub data: PathBuf,
    /// Policy config (JSON); defaults when omitted.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Optimiser config (JSON); defaults when omitted.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Seeds both initialisation and batch order [default: config].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimiser steps [default: config].
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Output checkpoint; the loss curve is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Environment config (JSON); replaces the one in the eval config.
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Evaluation protocol (JSON); defaults when omitted.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Rollout worker threads [default: 1 or config].
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also evaluate under peg colour and ±20% peg size.
    #[arg(long)]
    pub variations: bool,
    /// Save every rollout under `<out>/rollouts`.
    #[arg(long)]
    pub record: bool,
}

#[derive(Debug, clap::Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `table1`, `visk-vs-vision`, `visk-proprio` or a JSON file listing modality masks.
    #[arg(long, default_value = "table1")]
    pub combos: String,
    /// Comma-separated training seeds [default: 0,1,2 or config].
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Optimiser steps per policy [default: config].
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Evaluate each row's best seed under the appearance variations too.
    #[arg(long)]
    pub generalize: bool,
    /// Output directory for checkpoints and reports.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ViewArg {
    Top,
    Side,
    Wrist,
}

#[derive(Debug, clap::Args)]
pub struct ReplayArgs {
    /// Demonstration or rollout directory.
    #[arg(long)]
    pub demo: PathBuf,
    #[arg(long, value_enum, default_value_t = ViewArg::Top)]
    pub view: ViewArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Md,
    Csv,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Directory holding `<name>.json`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Md)]
    pub fmt: FormatArg,
    /// Report file stem, `report` or `generalization`.
    #[arg(long, default_value = "report")]
    pub name: String,
}

/// Reads a JSON config, or the default when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serialises");
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Resolves `--combos`: a preset name or a JSON file with a list of masks.
pub fn parse_combos(arg: &str) -> Result<Vec<ModalityMask>> {
    if let Some(c) = combo_preset(arg) {
        return Ok(c);
    }
    let path = Path::new(arg);
    if !path.exists() {
        bail!("unknown combo preset `{arg}` (expected table1, visk-vs-vision, visk-proprio or a JSON file)");
    }
    let masks: Vec<ModalityMask> = load_config::<Vec<ModalityMask>>(Some(path))?;
    if masks.is_empty() {
        bail!("{} lists no combinations", path.display());
    }
    Ok(masks)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CollectScripted(a) => commands::collect(a),
        Command::TeleopServe(a) => commands::teleop(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Replay(a) => commands::replay(a),
        Command::Report(a) => commands::report(a),
    }
}
