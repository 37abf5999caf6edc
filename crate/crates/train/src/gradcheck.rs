//! Central-difference check of the training gradient through the full
//! network, in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visk_core::data::SyncedFrame;
use visk_core::{ModalityMask, View};
use visk_nn::{Graph, ParamStore};
use visk_policy::{forward_graph, init_params, ImagePool, NormStats, ObsBatch, PolicyConfig};

use crate::{bc_loss_node, TrainError};

/// Agreement of one parameter tensor's gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

impl GroupCheck {
    /// Key biases shift every attention score of a query by the same amount,
    /// which softmax ignores, so their true gradient is zero and a relative
    /// error is meaningless; both norms must vanish instead.
    pub fn passes(&self, tol: f64) -> bool {
        if self.name.ends_with("attn.k.b") {
            self.analytic_norm < 1e-9 && self.numeric_norm < 1e-9
        } else {
            self.rel_err < tol
        }
    }
}

/// One loss evaluation's worth of inputs.
pub struct GradProblem {
    pub cfg: PolicyConfig,
    pub params: ParamStore<f64>,
    pub obs: ObsBatch<f64>,
    /// Flattened `[B, H·4]` normalised targets.
    pub target: Vec<f32>,
    /// One flag per chunk step of every sample.
    pub step_mask: Vec<bool>,
}

/// Every modality on 8×8 images with `d_model = 16`, one layer and `H = 2`,
/// parameters jittered away from their initial values.
pub fn toy_problem(pool: ImagePool, seed: u64) -> Result<GradProblem, TrainError> {
    let cfg = PolicyConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        ff_dim: 8,
        chunk_h: 2,
        modalities: ModalityMask::all(),
        image_hw: 8,
        cnn_channels: vec![2, 3],
        stem_stride: 2,
        image_pool: pool,
        mlp_hidden: 4,
        head_hidden: 8,
        ..PolicyConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // zero biases and unit gains would hide mistakes in their gradients
    let mut params: ParamStore<f64> = init_params(&cfg)?.cast();
    for i in 0..params.len() {
        for v in params.get_mut(i).data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let batch = 2;
    let frames: Vec<SyncedFrame> = (0..batch)
        .map(|_| SyncedFrame {
            t: 0.0,
            images: View::ALL.iter().map(|&v| (v, (0..8 * 8 * 3).map(|_| rng.random()).collect())).collect(),
            tactile: Some(std::array::from_fn(|_| rng.random_range(-2.0..2.0))),
            proprio: Some(std::array::from_fn(|_| rng.random_range(-2.0..2.0))),
            action: [0.0; 4],
        })
        .collect();
    let refs: Vec<&SyncedFrame> = frames.iter().collect();
    let obs = ObsBatch::from_frames(&refs, &cfg, &NormStats::default())?;
    let target = (0..batch * cfg.chunk_h * 4).map(|_| rng.random_range(-0.8..0.8)).collect();
    let step_mask = (0..batch * cfg.chunk_h).map(|i| i != 1).collect();
    Ok(GradProblem { cfg, params, obs, target, step_mask })
}

fn loss(p: &GradProblem, params: &ParamStore<f64>) -> Result<f64, TrainError> {
    let mut g = Graph::new(params);
    let out = forward_graph(&mut g, &p.cfg, &p.obs)?;
    let l = bc_loss_node(&mut g, out, &p.target, &p.step_mask)?;
    Ok(g.value(l).data()[0])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares backprop against `(L(θ+h) − L(θ−h)) / 2h` for every scalar of
/// every parameter tensor.
pub fn check_gradients(p: &GradProblem, h: f64) -> Result<Vec<GroupCheck>, TrainError> {
    let grads = {
        let mut g = Graph::new(&p.params);
        let out = forward_graph(&mut g, &p.cfg, &p.obs)?;
        let l = bc_loss_node(&mut g, out, &p.target, &p.step_mask)?;
        g.backward(l)
    };
    let mut params = p.params.clone();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let n = params.get(i).numel();
        let analytic = match &grads.by_param[i] {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; n],
        };
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = params.get(i).data()[j];
            params.get_mut(i).data_mut()[j] = orig + h;
            let up = loss(p, &params)?;
            params.get_mut(i).data_mut()[j] = orig - h;
            let down = loss(p, &params)?;
            params.get_mut(i).data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let (an, nn) = (norm(&analytic), norm(&numeric));
        let scale = an.max(nn);
        let rel_err = if scale > 0.0 { norm(&diff) / scale } else { 0.0 };
        out.push(GroupCheck { name: params.name(i).to_string(), rel_err, analytic_norm: an, numeric_norm: nn });
    }
    Ok(out)
}
