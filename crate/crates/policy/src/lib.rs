//! Visuotactile transformer policy predicting chunks of future actions.
//!
//! Each enabled modality becomes one token: a residual CNN per camera view
//! (the two third-person views share weights), small MLPs for the skin and
//! proprioception, plus a learned action token whose final state is decoded
//! into `chunk_h` actions.

use std::path::PathBuf;

use thiserror::Error;
use visk_core::data::{SyncedFrame, ACTION_WIDTH};
use visk_nn::{Graph, ParamStore, Tensor};

mod checkpoint;
mod config;
pub mod model;
mod norm;
mod smooth;

pub use checkpoint::{check_layout, Checkpoint};
pub use config::{ImagePool, PolicyConfig};
pub use model::{forward_graph, init_params, ObsBatch};
pub use norm::NormStats;
pub use smooth::{smooth_weights, temporal_smooth, ChunkBuffer, IssuedChunk};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("observation lacks enabled modality `{0}`")]
    MissingModality(String),
    #[error("no tokens to attend over")]
    EmptyTokenList,
    #[error("no action chunks buffered")]
    EmptyBuffer,
    #[error("no buffered chunk covers tick {tick}")]
    StaleChunk { tick: u64 },
    #[error("checkpoint does not match its configuration: {0}")]
    CheckpointMismatch(String),
    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Normalised chunk predictions `[B, H·4]` for a batch, without gradients.
pub fn predict_normalized(cfg: &PolicyConfig, params: &ParamStore<f32>, obs: &ObsBatch<f32>) -> Result<Tensor<f32>, PolicyError> {
    let mut g = Graph::new(params);
    let out = forward_graph(&mut g, cfg, obs)?;
    Ok(g.value(out).clone())
}

/// A trained policy plus the per-episode ensembling state.
#[derive(Debug, Clone)]
pub struct Policy {
    cfg: PolicyConfig,
    params: ParamStore<f32>,
    stats: NormStats,
    buffer: ChunkBuffer,
    tick: u64,
    action_limit: Option<f32>,
}

impl Policy {
    pub fn new(cfg: PolicyConfig, params: ParamStore<f32>, stats: NormStats) -> Result<Self, PolicyError> {
        cfg.validate()?;
        check_layout(&cfg, &params)?;
        let buffer = ChunkBuffer::new(cfg.chunk_h, cfg.smooth_m);
        Ok(Self { cfg, params, stats, buffer, tick: 0, action_limit: None })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, PolicyError> {
        Self::new(ckpt.config, ckpt.params, ckpt.stats)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PolicyError> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    /// Clamps the translational components returned by [`Policy::act`] to
    /// `±limit` (cm per tick).
    pub fn set_action_limit(&mut self, limit: Option<f32>) {
        self.action_limit = limit;
    }

    /// Forgets buffered chunks; call at the start of every episode.
    pub fn reset(&mut self) {
        self.buffer.clear();
        self.tick = 0;
    }

    /// Chunk of `chunk_h` actions in environment units for one observation.
    /// Tactile readings must already be baseline-subtracted.
    pub fn predict_chunk(&self, frame: &SyncedFrame) -> Result<Vec<[f32; ACTION_WIDTH]>, PolicyError> {
        let obs = ObsBatch::from_frames(&[frame], &self.cfg, &self.stats)?;
        let out = predict_normalized(&self.cfg, &self.params, &obs)?;
        Ok(out
            .data()
            .chunks_exact(ACTION_WIDTH)
            .map(|a| self.stats.denormalize_action(&a.try_into().unwrap()))
            .collect())
    }

    /// Predicts a new chunk for the current tick and returns the ensembled
    /// action to execute.
    pub fn act(&mut self, frame: &SyncedFrame) -> Result<[f32; ACTION_WIDTH], PolicyError> {
        let chunk = self.predict_chunk(frame)?;
        self.buffer.push(self.tick, chunk);
        let mut a = self.buffer.action(self.tick)?;
        if let Some(lim) = self.action_limit {
            for v in &mut a[..3] {
                *v = v.clamp(-lim, lim);
            }
        }
        self.tick += 1;
        Ok(a)
    }
}
