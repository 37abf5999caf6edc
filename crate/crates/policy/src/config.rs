use serde::{Deserialize, Serialize};
use visk_core::data::ACTION_WIDTH;
use visk_core::ModalityMask;

use crate::PolicyError;

/// How the last convolutional feature map becomes a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImagePool {
    /// Keep every spatial cell (position-preserving).
    Flatten,
    /// Global average pool.
    Gap,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub chunk_h: usize,
    pub modalities: ModalityMask,
    pub image_hw: usize,
    /// Output channels of each encoder stage.
    pub cnn_channels: Vec<usize>,
    /// Kernel and stride of the first (patchifying) convolution.
    pub stem_stride: usize,
    pub image_pool: ImagePool,
    /// Hidden width of the tactile and proprio MLPs.
    pub mlp_hidden: usize,
    pub head_hidden: usize,
    pub smooth_m: f64,
    pub action_dim: usize,
    /// Tactile samples averaged into the per-episode baseline.
    pub k_baseline: usize,
    /// Seed for parameter initialisation.
    pub init_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            ff_dim: 256,
            chunk_h: 10,
            modalities: ModalityMask::visuotactile(),
            image_hw: 64,
            cnn_channels: vec![8, 16, 32],
            stem_stride: 4,
            image_pool: ImagePool::Flatten,
            mlp_hidden: 64,
            head_hidden: 256,
            smooth_m: 0.01,
            action_dim: ACTION_WIDTH,
            k_baseline: visk_core::data::DEFAULT_K_BASELINE,
            init_seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn with_modalities(modalities: ModalityMask) -> Self {
        Self { modalities, ..Self::default() }
    }

    /// Observation tokens per forward pass.
    pub fn n_obs_tokens(&self) -> usize {
        self.modalities.views().len() + self.modalities.tactile as usize + self.modalities.proprio as usize
    }

    /// Side of the final feature map of an image encoder.
    pub fn feature_hw(&self) -> usize {
        let mut hw = self.image_hw / self.stem_stride;
        for _ in 1..self.cnn_channels.len() {
            hw = (hw + 1) / 2;
        }
        hw
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if self.chunk_h == 0 {
            return bad("chunk_h must be at least 1".into());
        }
        if self.modalities.is_empty() {
            return bad("at least one modality must be enabled".into());
        }
        if self.action_dim != ACTION_WIDTH {
            return bad(format!("action_dim must be {ACTION_WIDTH}"));
        }
        if self.n_layers == 0 || self.ff_dim == 0 || self.mlp_hidden == 0 || self.head_hidden == 0 {
            return bad("layer counts and widths must be positive".into());
        }
        if !self.modalities.views().is_empty() {
            if self.cnn_channels.is_empty() || self.cnn_channels.contains(&0) {
                return bad("cnn_channels must be non-empty and positive".into());
            }
            if self.stem_stride == 0 || self.image_hw % self.stem_stride != 0 {
                return bad(format!("image_hw {} must be a multiple of stem_stride {}", self.image_hw, self.stem_stride));
            }
        }
        if !(self.smooth_m >= 0.0) || !self.smooth_m.is_finite() {
            return bad("smooth_m must be non-negative".into());
        }
        if self.k_baseline == 0 {
            return bad("k_baseline must be at least 1".into());
        }
        Ok(())
    }
}
