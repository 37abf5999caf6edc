use visk_core::data::{SyncedFrame, ACTION_WIDTH, PROPRIO_WIDTH, TACTILE_WIDTH};

/// Smallest scale used when a channel never varies in the data.
const MIN_SCALE: f32 = 1e-3;

/// Per-channel statistics frozen from the training set.
///
/// Actions map to policy units as `(a - mean) / scale` with `scale = 3σ`, so
/// the tanh head covers three standard deviations. Tactile and proprio
/// inputs are standardised.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub action_mean: [f32; ACTION_WIDTH],
    pub action_scale: [f32; ACTION_WIDTH],
    pub tactile_mean: [f32; TACTILE_WIDTH],
    pub tactile_std: [f32; TACTILE_WIDTH],
    pub proprio_mean: [f32; PROPRIO_WIDTH],
    pub proprio_std: [f32; PROPRIO_WIDTH],
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            action_mean: [0.0; ACTION_WIDTH],
            action_scale: [1.0; ACTION_WIDTH],
            tactile_mean: [0.0; TACTILE_WIDTH],
            tactile_std: [1.0; TACTILE_WIDTH],
            proprio_mean: [0.0; PROPRIO_WIDTH],
            proprio_std: [1.0; PROPRIO_WIDTH],
        }
    }
}

fn moments<const N: usize>(rows: impl Iterator<Item = [f32; N]>) -> Option<([f32; N], [f32; N])> {
    let mut sum = [0.0f64; N];
    let mut sq = [0.0f64; N];
    let mut n = 0usize;
    for r in rows {
        for i in 0..N {
            sum[i] += r[i] as f64;
            sq[i] += r[i] as f64 * r[i] as f64;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let mean = sum.map(|s| s / n as f64);
    let mut std = [0.0f32; N];
    for i in 0..N {
        std[i] = (sq[i] / n as f64 - mean[i] * mean[i]).max(0.0).sqrt() as f32;
    }
    Some((mean.map(|m| m as f32), std))
}

impl NormStats {
    /// Statistics over the frames; modalities absent from the frames keep
    /// identity normalisation.
    pub fn from_frames<'a>(frames: impl Iterator<Item = &'a SyncedFrame> + Clone) -> Self {
        let mut s = Self::default();
        if let Some((m, sd)) = moments(frames.clone().map(|f| f.action)) {
            s.action_mean = m;
            s.action_scale = sd.map(|v| (3.0 * v).max(MIN_SCALE));
        }
        if let Some((m, sd)) = moments(frames.clone().filter_map(|f| f.tactile)) {
            s.tactile_mean = m;
            s.tactile_std = sd.map(|v| v.max(MIN_SCALE));
        }
        if let Some((m, sd)) = moments(frames.filter_map(|f| f.proprio)) {
            s.proprio_mean = m;
            s.proprio_std = sd.map(|v| v.max(MIN_SCALE));
        }
        s
    }

    pub fn normalize_action(&self, a: &[f32; ACTION_WIDTH]) -> [f32; ACTION_WIDTH] {
        std::array::from_fn(|i| (a[i] - self.action_mean[i]) / self.action_scale[i])
    }

    pub fn denormalize_action(&self, a: &[f32; ACTION_WIDTH]) -> [f32; ACTION_WIDTH] {
        std::array::from_fn(|i| a[i] * self.action_scale[i] + self.action_mean[i])
    }

    pub fn normalize_tactile(&self, b: &[f32; TACTILE_WIDTH]) -> [f32; TACTILE_WIDTH] {
        std::array::from_fn(|i| (b[i] - self.tactile_mean[i]) / self.tactile_std[i])
    }

    pub fn normalize_proprio(&self, p: &[f32; PROPRIO_WIDTH]) -> [f32; PROPRIO_WIDTH] {
        std::array::from_fn(|i| (p[i] - self.proprio_mean[i]) / self.proprio_std[i])
    }

    /// Named flat vectors in checkpoint order.
    pub(crate) fn fields(&self) -> [(&'static str, &[f32]); 6] {
        [
            ("stats.action_mean", &self.action_mean),
            ("stats.action_scale", &self.action_scale),
            ("stats.tactile_mean", &self.tactile_mean),
            ("stats.tactile_std", &self.tactile_std),
            ("stats.proprio_mean", &self.proprio_mean),
            ("stats.proprio_std", &self.proprio_std),
        ]
    }

    pub(crate) fn set_field(&mut self, name: &str, v: &[f32]) -> bool {
        let dst: &mut [f32] = match name {
            "stats.action_mean" => &mut self.action_mean,
            "stats.action_scale" => &mut self.action_scale,
            "stats.tactile_mean" => &mut self.tactile_mean,
            "stats.tactile_std" => &mut self.tactile_std,
            "stats.proprio_mean" => &mut self.proprio_mean,
            "stats.proprio_std" => &mut self.proprio_std,
            _ => return false,
        };
        if dst.len() != v.len() {
            return false;
        }
        dst.copy_from_slice(v);
        true
    }
}
