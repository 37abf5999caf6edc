//! Parameter layout and the differentiable forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use visk_core::data::{SyncedFrame, PROPRIO_WIDTH, TACTILE_WIDTH};
use visk_core::View;
use visk_nn::{Graph, NodeId, ParamStore, Scalar, Tensor};

use crate::{ImagePool, NormStats, PolicyConfig, PolicyError};

/// Encoder parameter prefix for a view. Third-person views share weights.
pub fn encoder_prefix(view: View) -> &'static str {
    match view {
        View::Wrist => "enc.wrist",
        View::Top | View::Side => "enc.3p",
    }
}

struct Init {
    rng: ChaCha8Rng,
    store: ParamStore<f32>,
}

impl Init {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) {
        let d = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn(shape, |_| d.sample(&mut self.rng) as f32);
        self.store.insert(name, t);
    }

    fn glorot(&mut self, name: String, d_in: usize, d_out: usize, gain: f64) {
        let a = gain * (6.0 / (d_in + d_out) as f64).sqrt();
        let d = Uniform::new_inclusive(-a, a).expect("finite bound");
        let t = Tensor::from_fn(&[d_in, d_out], |_| d.sample(&mut self.rng) as f32);
        self.store.insert(name, t);
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f32) {
        self.store.insert(name, Tensor::from_fn(shape, |_| v));
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize, gain: f64) {
        self.glorot(format!("{prefix}.w"), d_in, d_out, gain);
        self.constant(format!("{prefix}.b"), &[d_out], 0.0);
    }

    fn conv(&mut self, prefix: &str, k: usize, c_in: usize, c_out: usize, gain: f64) {
        let fan_in = k * k * c_in;
        self.normal(format!("{prefix}.w"), &[fan_in, c_out], gain * (2.0 / fan_in as f64).sqrt());
        self.constant(format!("{prefix}.b"), &[c_out], 0.0);
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.constant(format!("{prefix}.g"), &[d], 1.0);
        self.constant(format!("{prefix}.b"), &[d], 0.0);
    }
}

fn encoder_prefixes(cfg: &PolicyConfig) -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    for v in cfg.modalities.views() {
        let p = encoder_prefix(v);
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

fn image_feature_width(cfg: &PolicyConfig) -> usize {
    let c = *cfg.cnn_channels.last().expect("validated");
    match cfg.image_pool {
        ImagePool::Flatten => cfg.feature_hw() * cfg.feature_hw() * c,
        ImagePool::Gap => c,
    }
}

/// Freshly initialised parameters for `cfg`. Only enabled modalities get
/// weights, in a fixed declaration order.
pub fn init_params(cfg: &PolicyConfig) -> Result<ParamStore<f32>, PolicyError> {
    cfg.validate()?;
    let mut init = Init { rng: ChaCha8Rng::seed_from_u64(cfg.init_seed), store: ParamStore::new() };
    let d = cfg.d_model;
    for prefix in encoder_prefixes(cfg) {
        let mut c_in = 3;
        for (i, &c) in cfg.cnn_channels.iter().enumerate() {
            let k = if i == 0 { cfg.stem_stride } else { 3 };
            init.conv(&format!("{prefix}.stage{i}.down"), k, c_in, c, 1.0);
            init.conv(&format!("{prefix}.stage{i}.res1"), 3, c, c, 1.0);
            init.conv(&format!("{prefix}.stage{i}.res2"), 3, c, c, 0.1);
            c_in = c;
        }
        init.linear(&format!("{prefix}.proj"), image_feature_width(cfg), d, 1.0);
    }
    if cfg.modalities.tactile {
        init.linear("tactile.fc1", TACTILE_WIDTH, cfg.mlp_hidden, 1.0);
        init.linear("tactile.fc2", cfg.mlp_hidden, d, 1.0);
    }
    if cfg.modalities.proprio {
        init.linear("proprio.fc1", PROPRIO_WIDTH, cfg.mlp_hidden, 1.0);
        init.linear("proprio.fc2", cfg.mlp_hidden, d, 1.0);
    }
    init.normal("trunk.pos".into(), &[cfg.n_obs_tokens() + 1, d], 0.02);
    init.normal("trunk.action_token".into(), &[1, d], 0.02);
    for l in 0..cfg.n_layers {
        let p = format!("trunk.layer{l}");
        init.layer_norm(&format!("{p}.ln1"), d);
        for m in ["q", "k", "v", "o"] {
            init.linear(&format!("{p}.attn.{m}"), d, d, 1.0);
        }
        init.layer_norm(&format!("{p}.ln2"), d);
        init.linear(&format!("{p}.ff1"), d, cfg.ff_dim, 1.0);
        init.linear(&format!("{p}.ff2"), cfg.ff_dim, d, 1.0);
    }
    init.layer_norm("trunk.ln_f", d);
    init.linear("head.fc1", d, cfg.head_hidden, 1.0);
    init.linear("head.fc2", cfg.head_hidden, cfg.chunk_h * cfg.action_dim, 0.1);
    Ok(init.store)
}

/// Network inputs for a batch, already scaled and normalised.
#[derive(Debug, Clone)]
pub struct ObsBatch<T> {
    pub batch: usize,
    /// `[B, H, W, 3]` in `[0, 1]` per enabled view, in token order.
    pub images: Vec<(View, Tensor<T>)>,
    pub tactile: Option<Tensor<T>>,
    pub proprio: Option<Tensor<T>>,
}

impl<T: Scalar> ObsBatch<T> {
    /// Packs frames for the enabled modalities. Tactile values are expected
    /// baseline-subtracted.
    pub fn from_frames(frames: &[&SyncedFrame], cfg: &PolicyConfig, stats: &NormStats) -> Result<Self, PolicyError> {
        let b = frames.len();
        let hw = cfg.image_hw;
        let px = hw * hw * 3;
        let mut images = Vec::new();
        for view in cfg.modalities.views() {
            let mut data = Vec::with_capacity(b * px);
            for f in frames {
                let img = f.image(view).ok_or_else(|| PolicyError::MissingModality(view.stream_name()))?;
                if img.len() != px {
                    return Err(PolicyError::ShapeMismatch(format!(
                        "{view} image has {} bytes, expected {hw}x{hw}x3",
                        img.len()
                    )));
                }
                data.extend(img.iter().map(|&p| T::lit(p as f64 / 255.0)));
            }
            images.push((view, Tensor::new(&[b, hw, hw, 3], data)));
        }
        let tactile = if cfg.modalities.tactile {
            let mut data = Vec::with_capacity(b * TACTILE_WIDTH);
            for f in frames {
                let t = f.tactile.ok_or_else(|| PolicyError::MissingModality("tactile".into()))?;
                data.extend(stats.normalize_tactile(&t).iter().map(|&v| T::lit(v as f64)));
            }
            Some(Tensor::new(&[b, TACTILE_WIDTH], data))
        } else {
            None
        };
        let proprio = if cfg.modalities.proprio {
            let mut data = Vec::with_capacity(b * PROPRIO_WIDTH);
            for f in frames {
                let p = f.proprio.ok_or_else(|| PolicyError::MissingModality("proprio".into()))?;
                data.extend(stats.normalize_proprio(&p).iter().map(|&v| T::lit(v as f64)));
            }
            Some(Tensor::new(&[b, PROPRIO_WIDTH], data))
        } else {
            None
        };
        Ok(Self { batch: b, images, tactile, proprio })
    }
}

fn p<T: Scalar>(g: &mut Graph<T>, name: &str) -> NodeId {
    g.param_by_name(name)
}

fn dense<T: Scalar>(g: &mut Graph<T>, prefix: &str, x: NodeId) -> NodeId {
    let (w, b) = (p(g, &format!("{prefix}.w")), p(g, &format!("{prefix}.b")));
    g.linear(x, w, Some(b))
}

fn conv<T: Scalar>(g: &mut Graph<T>, prefix: &str, x: NodeId, k: usize, stride: usize, pad: usize) -> NodeId {
    let (w, b) = (p(g, &format!("{prefix}.w")), p(g, &format!("{prefix}.b")));
    g.conv2d(x, w, b, k, stride, pad)
}

fn layer_norm<T: Scalar>(g: &mut Graph<T>, prefix: &str, x: NodeId) -> NodeId {
    let (gm, bt) = (p(g, &format!("{prefix}.g")), p(g, &format!("{prefix}.b")));
    g.layer_norm(x, gm, bt)
}

/// Residual CNN: per stage a strided convolution then a residual block;
/// the final map is pooled and projected to `d_model`. Input `[B, H, W, 3]`.
pub fn encode_image<T: Scalar>(g: &mut Graph<T>, cfg: &PolicyConfig, prefix: &str, x: NodeId) -> NodeId {
    let mut h = x;
    for i in 0..cfg.cnn_channels.len() {
        let (k, s, pad) = if i == 0 { (cfg.stem_stride, cfg.stem_stride, 0) } else { (3, 2, 1) };
        h = conv(g, &format!("{prefix}.stage{i}.down"), h, k, s, pad);
        h = g.gelu(h);
        let r = conv(g, &format!("{prefix}.stage{i}.res1"), h, 3, 1, 1);
        let r = g.gelu(r);
        let r = conv(g, &format!("{prefix}.stage{i}.res2"), r, 3, 1, 1);
        h = g.add(h, r);
        h = g.gelu(h);
    }
    let pooled = match cfg.image_pool {
        ImagePool::Gap => g.global_avg_pool(h),
        ImagePool::Flatten => {
            let s = g.value(h).shape().to_vec();
            g.reshape(h, &[s[0], s[1] * s[2] * s[3]])
        }
    };
    dense(g, &format!("{prefix}.proj"), pooled)
}

/// Two-layer MLP `in -> hidden (GELU) -> d_model`.
pub fn encode_vector<T: Scalar>(g: &mut Graph<T>, prefix: &str, x: NodeId) -> NodeId {
    let h = dense(g, &format!("{prefix}.fc1"), x);
    let h = g.gelu(h);
    dense(g, &format!("{prefix}.fc2"), h)
}

/// Pre-norm transformer over `[obs tokens..., action token]` with learned
/// positions and no mask; returns the action token's final state `[B, D]`.
pub fn trunk_forward<T: Scalar>(g: &mut Graph<T>, cfg: &PolicyConfig, tokens: &[NodeId]) -> Result<NodeId, PolicyError> {
    if tokens.is_empty() {
        return Err(PolicyError::EmptyTokenList);
    }
    let b = g.value(tokens[0]).shape()[0];
    let ones = g.input(Tensor::from_fn(&[b, 1], |_| T::one()));
    let tok = p(g, "trunk.action_token");
    let action = g.linear(ones, tok, None);
    let mut seq: Vec<NodeId> = tokens.to_vec();
    seq.push(action);
    let x = g.stack(&seq);
    let pos = p(g, "trunk.pos");
    let mut x = g.add_broadcast(x, pos);
    for l in 0..cfg.n_layers {
        let pre = format!("trunk.layer{l}");
        let n = layer_norm(g, &format!("{pre}.ln1"), x);
        let q = dense(g, &format!("{pre}.attn.q"), n);
        let k = dense(g, &format!("{pre}.attn.k"), n);
        let v = dense(g, &format!("{pre}.attn.v"), n);
        let a = g.attention(q, k, v, cfg.n_heads);
        let a = dense(g, &format!("{pre}.attn.o"), a);
        x = g.add(x, a);
        let n = layer_norm(g, &format!("{pre}.ln2"), x);
        let f = dense(g, &format!("{pre}.ff1"), n);
        let f = g.gelu(f);
        let f = dense(g, &format!("{pre}.ff2"), f);
        x = g.add(x, f);
    }
    let x = layer_norm(g, "trunk.ln_f", x);
    Ok(g.select(x, seq.len() - 1))
}

/// Full network: `[B, H·4]` tanh-bounded chunk in normalised action units.
pub fn forward_graph<T: Scalar>(g: &mut Graph<T>, cfg: &PolicyConfig, obs: &ObsBatch<T>) -> Result<NodeId, PolicyError> {
    let mut tokens = Vec::with_capacity(cfg.n_obs_tokens());
    for (view, img) in &obs.images {
        let x = g.input(img.clone());
        tokens.push(encode_image(g, cfg, encoder_prefix(*view), x));
    }
    if let Some(t) = &obs.tactile {
        let x = g.input(t.clone());
        tokens.push(encode_vector(g, "tactile", x));
    }
    if let Some(pr) = &obs.proprio {
        let x = g.input(pr.clone());
        tokens.push(encode_vector(g, "proprio", x));
    }
    let feat = trunk_forward(g, cfg, &tokens)?;
    let h = dense(g, "head.fc1", feat);
    let h = g.gelu(h);
    let out = dense(g, "head.fc2", h);
    Ok(g.tanh(out))
}
