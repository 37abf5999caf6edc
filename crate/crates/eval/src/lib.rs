//! Closed-loop evaluation: rollouts on held-out slots, the seed × target
//! success protocol, modality ablations and their reports.

use std::path::PathBuf;

use thiserror::Error;
use visk_core::data::DataError;
use visk_core::sim::SimError;
use visk_policy::PolicyError;
use visk_train::TrainError;

mod protocol;
mod report;
mod rollout;

pub use protocol::{
    ablation_matrix, best_seed, checkpoint_path, evaluate, evaluate_policy, generalization_report, EvalConfig, Variation,
};
pub use report::{cell_text, mean_std, CellResult, EpisodeLog, EvalReport, ReportFormat, ReportRow, SeedResult};
pub use rollout::{rollout, Controller, EpisodeResult, LearnedController, RandomController, ReplayController, TickInput};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("checkpoint incompatible with the environment: {0}")]
    CheckpointMismatch(String),
    #[error("report is incomplete: {0}")]
    IncompleteReport(String),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}
