//! Human teleoperation of the simulator over newline-delimited JSON on TCP.
//!
//! The client streams velocity commands; the server holds the latest one,
//! perturbs its direction the same way the scripted expert is perturbed,
//! steps the simulator at the policy rate and broadcasts frames at the
//! camera rate. Successful recorded episodes are saved as demonstrations.

use thiserror::Error;
use visk_core::data::DataError;
use visk_core::sim::SimError;

pub mod protocol;
mod server;
mod session;

pub use server::{serve, ServeOptions};
pub use session::{Session, StopOutcome, TeleopConfig};

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o failure on {context}: {source}")]
    Io { context: String, source: std::io::Error },
}
