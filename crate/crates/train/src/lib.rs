//! Behaviour cloning: masked-MSE regression of action chunks with Adam.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use visk_core::data::{chunk_targets, synchronize, DataError, DatasetIndex, Demonstration, SyncedFrame, ACTION_WIDTH};
use visk_nn::{Adam, Graph, NodeId, Scalar};
use visk_policy::{forward_graph, init_params, Checkpoint, NormStats, ObsBatch, PolicyConfig, PolicyError};

pub mod gradcheck;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("every target entry is masked")]
    AllMasked,
    #[error("prediction has {pred} entries, target {target}, mask {mask}")]
    ShapeMismatch { pred: usize, target: usize, mask: usize },
    #[error("dataset has no training frames")]
    EmptyDataset,
    #[error("loss became {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("failed to write loss curve {path}: {source}")]
    LossCurve { path: PathBuf, source: csv::Error },
}

/// Optimisation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch: usize,
    pub steps: usize,
    pub grad_clip: f32,
    /// Linear ramp from zero over this many steps, then cosine decay to zero.
    pub warmup_steps: usize,
    /// Keep `lr` constant after warmup instead of decaying.
    pub constant_lr: bool,
    pub seed: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Log the running loss every this many steps (0 disables).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 32,
            steps: 2000,
            grad_clip: 1.0,
            warmup_steps: 100,
            constant_lr: false,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            eval_every: 250,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 || self.steps == 0 {
            return Err(TrainError::InvalidConfig("batch and steps must be at least 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(TrainError::InvalidConfig("grad_clip must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used for the update at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f32 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f32 / self.warmup_steps as f32;
        }
        if self.constant_lr {
            return self.lr;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1);
        let frac = (step - self.warmup_steps) as f64 / span as f64;
        (self.lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())) as f32
    }
}

/// Mean of `(pred - target)²` over the entries of unmasked chunk steps.
/// `step_mask` has one flag per action in the chunk.
pub fn bc_loss(pred: &[[f32; ACTION_WIDTH]], target: &[[f32; ACTION_WIDTH]], step_mask: &[bool]) -> Result<f64, TrainError> {
    if pred.len() != target.len() || pred.len() != step_mask.len() {
        return Err(TrainError::ShapeMismatch { pred: pred.len(), target: target.len(), mask: step_mask.len() });
    }
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for ((p, t), &m) in pred.iter().zip(target).zip(step_mask) {
        if m {
            for i in 0..ACTION_WIDTH {
                let e = p[i] as f64 - t[i] as f64;
                acc += e * e;
            }
            n += ACTION_WIDTH;
        }
    }
    if n == 0 {
        return Err(TrainError::AllMasked);
    }
    Ok(acc / n as f64)
}

/// [`bc_loss`] as a graph node over a `[B, H·4]` prediction. `target` and
/// `step_mask` are flattened per sample.
pub fn bc_loss_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    pred: NodeId,
    target: &[f32],
    step_mask: &[bool],
) -> Result<NodeId, TrainError> {
    let n = g.value(pred).numel();
    if target.len() != n || step_mask.len() * ACTION_WIDTH != n {
        return Err(TrainError::ShapeMismatch { pred: n, target: target.len(), mask: step_mask.len() * ACTION_WIDTH });
    }
    if !step_mask.iter().any(|&m| m) {
        return Err(TrainError::AllMasked);
    }
    let mask = step_mask.iter().flat_map(|&m| [m; ACTION_WIDTH]).collect();
    let target = target.iter().map(|&v| T::lit(v as f64)).collect();
    Ok(g.masked_mse(pred, target, mask))
}

/// One training example: the synchronised observation and its chunk target
/// in raw action units.
#[derive(Debug, Clone)]
pub struct Sample {
    pub frame: SyncedFrame,
    pub chunk: Vec<[f32; ACTION_WIDTH]>,
    pub mask: Vec<bool>,
}

/// Synchronises every demonstration at its action rate and pairs each tick
/// with the next `chunk_h` actions.
pub fn build_samples(demos: &[Demonstration], cfg: &PolicyConfig) -> Result<Vec<Sample>, TrainError> {
    let mut out = Vec::new();
    for demo in demos {
        let rate = demo.action_stream()?.nominal_rate();
        let frames = synchronize(demo, rate, &cfg.modalities, Some(cfg.k_baseline))?;
        let actions: Vec<[f32; ACTION_WIDTH]> = frames.iter().map(|f| f.action).collect();
        for (t, frame) in frames.into_iter().enumerate() {
            let (chunk, mask) = chunk_targets(&actions, t, cfg.chunk_h)?;
            out.push(Sample { frame, chunk, mask });
        }
    }
    Ok(out)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mini-batch loss at every step, in normalised action units.
    pub losses: Vec<f64>,
}

/// Trains from scratch on `samples`.
pub fn train_samples(
    samples: &[Sample],
    policy_cfg: &PolicyConfig,
    train_cfg: &TrainConfig,
    metadata: serde_json::Value,
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut params = init_params(policy_cfg)?;
    let stats = NormStats::from_frames(samples.iter().map(|s| &s.frame));
    let targets: Vec<Vec<f32>> = samples
        .iter()
        .map(|s| s.chunk.iter().flat_map(|a| stats.normalize_action(a)).collect())
        .collect();

    let mut adam = Adam::new(&params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps, Some(train_cfg.grad_clip));
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(train_cfg.steps);
    let batch = train_cfg.batch.min(samples.len());

    for step in 0..train_cfg.steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let frames: Vec<&SyncedFrame> = idx.iter().map(|&i| &samples[i].frame).collect();
        let target: Vec<f32> = idx.iter().flat_map(|&i| targets[i].iter().copied()).collect();
        let mask: Vec<bool> = idx.iter().flat_map(|&i| samples[i].mask.iter().copied()).collect();
        let obs = ObsBatch::<f32>::from_frames(&frames, policy_cfg, &stats)?;

        let grads = {
            let mut g = Graph::new(&params);
            let pred = forward_graph(&mut g, policy_cfg, &obs)?;
            let loss = bc_loss_node(&mut g, pred, &target, &mask)?;
            let value = g.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { step, loss: value });
            }
            losses.push(value);
            g.backward(loss)
        };
        adam.lr = train_cfg.lr_at(step);
        adam.step(&mut params, &grads);
        if !params.all_finite() {
            return Err(TrainError::NonFiniteLoss { step, loss: f64::NAN });
        }
        if train_cfg.eval_every > 0 && (step + 1) % train_cfg.eval_every == 0 {
            let recent = &losses[losses.len().saturating_sub(train_cfg.eval_every)..];
            log::info!("step {}: loss {:.5}", step + 1, recent.iter().sum::<f64>() / recent.len() as f64);
        }
    }

    let mut metadata = metadata;
    if let serde_json::Value::Object(map) = &mut metadata {
        map.insert("train".into(), serde_json::to_value(train_cfg).expect("config serialises"));
        map.insert("frames".into(), samples.len().into());
        map.insert("final_loss".into(), losses.last().copied().unwrap_or(f64::NAN).into());
    }
    Ok(TrainOutcome { checkpoint: Checkpoint { config: policy_cfg.clone(), params, stats, metadata }, losses })
}

/// Path of the loss curve written next to a checkpoint.
pub fn loss_curve_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".loss.csv");
    checkpoint.with_file_name(name)
}

pub fn write_loss_curve(path: &Path, losses: &[f64]) -> Result<(), TrainError> {
    let err = |source| TrainError::LossCurve { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["step", "loss"]).map_err(err)?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

/// Trains on the dataset at `dataset_dir` and writes the checkpoint to `out`
/// plus its `step,loss` curve alongside.
pub fn train(dataset_dir: &Path, policy_cfg: &PolicyConfig, train_cfg: &TrainConfig, out: &Path) -> Result<PathBuf, TrainError> {
    let index = DatasetIndex::load(dataset_dir)?;
    let demos = index.load_demos(dataset_dir)?;
    let samples = build_samples(&demos, policy_cfg)?;
    let metadata = serde_json::json!({
        "dataset": dataset_dir.display().to_string(),
        "demos": demos.len(),
    });
    let outcome = train_samples(&samples, policy_cfg, train_cfg, metadata)?;
    outcome.checkpoint.save(out)?;
    write_loss_curve(&loss_curve_path(out), &outcome.losses)?;
    Ok(out.to_path_buf())
}
