//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Each node stores its
//! value and the operation that produced it; [`Graph::backward`] walks the
//! tape in reverse and returns gradients for every parameter leaf.

use crate::scalar::gemm;
use crate::{ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Geometry of an NHWC convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kernel) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kernel) / self.stride + 1
    }
    fn patch(&self) -> usize {
        self.kernel * self.kernel * self.c_in
    }
}

enum Op<T> {
    Input,
    Param,
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    AddBroadcast { x: NodeId, b: NodeId },
    Relu(NodeId),
    /// Keeps the tanh term of the forward pass for the backward pass.
    Gelu { x: NodeId, th: Vec<T> },
    Tanh(NodeId),
    Reshape(NodeId),
    Conv2d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom, cols: Vec<T> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<T>, rstd: Vec<T> },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, probs: Vec<T> },
    Stack(Vec<NodeId>),
    Select { x: NodeId, index: usize, tokens: usize },
    GlobalAvgPool { x: NodeId, hw: usize },
    MaskedMse { pred: NodeId, target: Vec<T>, mask: Vec<bool>, count: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients for each parameter of the store the graph was built against.
pub struct Grads<T> {
    pub by_param: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn global_norm(&self) -> f64 {
        self.by_param.iter().flatten().map(|g| g.sum_sq()).sum::<f64>().sqrt()
    }
}

pub struct Graph<'s, T> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), param_nodes: vec![None; store.len()] }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Leaf for parameter `index`; repeated calls return the same node so
    /// shared weights accumulate a single gradient.
    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        let value = self.store.get(index).clone();
        let id = self.push(value, Op::Param, true);
        self.param_nodes[index] = Some(id);
        id
    }

    pub fn param_by_name(&mut self, name: &str) -> NodeId {
        let index = self.store.index_of(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(index)
    }

    /// `y = x · w + b` over the last dimension of `x`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(xv.last_dim(), d_in, "linear: input width {} != {}", xv.last_dim(), d_in);
        let rows = xv.rows();
        let mut out = vec![T::zero(); rows * d_out];
        if let Some(b) = b {
            let bv = self.nodes[b.0].value.data();
            for row in out.chunks_mut(d_out) {
                row.copy_from_slice(bv);
            }
        }
        gemm(false, false, rows, d_in, d_out, xv.data(), wv.data(), T::one(), &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Tensor::new(&shape, out), Op::Linear { x, w, b }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| *x + *y).collect();
        let value = Tensor::new(av.shape(), data);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    /// Adds `b` to every trailing block of `x` (`b`'s shape is a suffix of `x`'s).
    pub fn add_broadcast(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        let n = bv.numel();
        assert!(xv.shape().ends_with(bv.shape()), "add_broadcast: {:?} vs {:?}", xv.shape(), bv.shape());
        let mut data = xv.data().to_vec();
        for block in data.chunks_mut(n) {
            for (d, v) in block.iter_mut().zip(bv.data()) {
                *d = *d + *v;
            }
        }
        let value = Tensor::new(xv.shape(), data);
        let needs = self.needs(x) || self.needs(b);
        self.push(value, Op::AddBroadcast { x, b }, needs)
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let value = Tensor::new(xv.shape(), xv.data().iter().map(|v| f(*v)).collect());
        let needs = self.needs(x);
        self.push(value, op, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let th: Vec<T> = xv.data().iter().map(|v| gelu_tanh(*v)).collect();
        let half = T::lit(0.5);
        let out = xv.data().iter().zip(&th).map(|(v, t)| half * *v * (T::one() + *t)).collect();
        let value = Tensor::new(xv.shape(), out);
        let needs = self.needs(x);
        self.push(value, Op::Gelu { x, th }, needs)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let value = self.nodes[x.0].value.clone().reshape(shape);
        let needs = self.needs(x);
        self.push(value, Op::Reshape(x), needs)
    }

    /// NHWC convolution; `w` is `[k·k·c_in, c_out]` with rows ordered (ky, kx, c).
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, kernel: usize, stride: usize, pad: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let s = xv.shape();
        assert_eq!(s.len(), 4, "conv2d expects NHWC input");
        let geom = ConvGeom {
            batch: s[0],
            h: s[1],
            w: s[2],
            c_in: s[3],
            c_out: wv.shape()[1],
            kernel,
            stride,
            pad,
        };
        assert_eq!(wv.shape()[0], geom.patch(), "conv2d: weight rows != k*k*c_in");
        let cols = im2col(xv.data(), &geom);
        let rows = geom.batch * geom.out_h() * geom.out_w();
        let mut out = vec![T::zero(); rows * geom.c_out];
        let bv = self.nodes[b.0].value.data();
        for row in out.chunks_mut(geom.c_out) {
            row.copy_from_slice(bv);
        }
        gemm(false, false, rows, geom.patch(), geom.c_out, &cols, wv.data(), T::one(), &mut out);
        let value = Tensor::new(&[geom.batch, geom.out_h(), geom.out_w(), geom.c_out], out);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(value, Op::Conv2d { x, w, b, geom, cols }, needs)
    }

    /// Layer normalisation over the last dimension.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let eps = T::lit(1e-5);
        let xv = &self.nodes[x.0].value;
        let d = xv.last_dim();
        let g = self.nodes[gamma.0].value.data();
        let bt = self.nodes[beta.0].value.data();
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut out = vec![T::zero(); xv.numel()];
        let mut rstd = Vec::with_capacity(xv.rows());
        let dn = T::lit(d as f64);
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().fold(T::zero(), |a, v| a + *v) / dn;
            let var = row.iter().fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean)) / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + bt[j];
            }
        }
        let value = Tensor::new(xv.shape(), out);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, needs)
    }

    /// Unmasked multi-head scaled dot-product attention over `[B, T, D]` inputs.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
        let s = self.nodes[q.0].value.shape().to_vec();
        assert_eq!(s.len(), 3, "attention expects [B, T, D]");
        let (b, t, d) = (s[0], s[1], s[2]);
        assert_eq!(d % heads, 0, "d_model must be divisible by heads");
        let dh = d / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let qv = self.nodes[q.0].value.data();
        let kv = self.nodes[k.0].value.data();
        let vv = self.nodes[v.0].value.data();
        let mut probs = vec![T::zero(); b * heads * t * t];
        let mut out = vec![T::zero(); b * t * d];
        for bi in 0..b {
            for h in 0..heads {
                let off = h * dh;
                let p = &mut probs[(bi * heads + h) * t * t..(bi * heads + h + 1) * t * t];
                for i in 0..t {
                    let qi = &qv[(bi * t + i) * d + off..(bi * t + i) * d + off + dh];
                    let row = &mut p[i * t..(i + 1) * t];
                    let mut mx = T::neg_infinity();
                    for j in 0..t {
                        let kj = &kv[(bi * t + j) * d + off..(bi * t + j) * d + off + dh];
                        let sc = dot(qi, kj) * scale;
                        row[j] = sc;
                        mx = mx.max(sc);
                    }
                    let mut z = T::zero();
                    for r in row.iter_mut() {
                        *r = (*r - mx).exp();
                        z = z + *r;
                    }
                    for r in row.iter_mut() {
                        *r = *r / z;
                    }
                    let o = &mut out[(bi * t + i) * d + off..(bi * t + i) * d + off + dh];
                    for j in 0..t {
                        let vj = &vv[(bi * t + j) * d + off..(bi * t + j) * d + off + dh];
                        let w = row[j];
                        for (oe, ve) in o.iter_mut().zip(vj) {
                            *oe = *oe + w * *ve;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&s, out);
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(value, Op::Attention { q, k, v, heads, probs }, needs)
    }

    /// Stacks `[B, D]` nodes into a `[B, T, D]` token sequence.
    pub fn stack(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "stack of zero tokens");
        let first = self.nodes[xs[0].0].value.shape().to_vec();
        assert_eq!(first.len(), 2, "stack expects [B, D] tokens");
        let (b, d, t) = (first[0], first[1], xs.len());
        let mut out = vec![T::zero(); b * t * d];
        for (ti, x) in xs.iter().enumerate() {
            let xv = &self.nodes[x.0].value;
            assert_eq!(xv.shape(), &first[..], "stack: token shapes differ");
            for bi in 0..b {
                out[(bi * t + ti) * d..(bi * t + ti + 1) * d].copy_from_slice(&xv.data()[bi * d..(bi + 1) * d]);
            }
        }
        let needs = xs.iter().any(|x| self.needs(*x));
        self.push(Tensor::new(&[b, t, d], out), Op::Stack(xs.to_vec()), needs)
    }

    /// Picks token `index` out of a `[B, T, D]` sequence.
    pub fn select(&mut self, x: NodeId, index: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (b, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert!(index < t);
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            out.extend_from_slice(&xv.data()[(bi * t + index) * d..(bi * t + index + 1) * d]);
        }
        let needs = self.needs(x);
        self.push(Tensor::new(&[b, d], out), Op::Select { x, index, tokens: t }, needs)
    }

    /// `[B, H, W, C] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let s = xv.shape();
        let (b, hw, c) = (s[0], s[1] * s[2], s[3]);
        let inv = T::lit(1.0 / hw as f64);
        let mut out = vec![T::zero(); b * c];
        for bi in 0..b {
            for p in 0..hw {
                let src = &xv.data()[(bi * hw + p) * c..(bi * hw + p + 1) * c];
                for (o, v) in out[bi * c..(bi + 1) * c].iter_mut().zip(src) {
                    *o = *o + *v * inv;
                }
            }
        }
        let needs = self.needs(x);
        self.push(Tensor::new(&[b, c], out), Op::GlobalAvgPool { x, hw }, needs)
    }

    /// Mean of `(pred - target)^2` over entries whose mask is set.
    pub fn masked_mse(&mut self, pred: NodeId, target: Vec<T>, mask: Vec<bool>) -> NodeId {
        let pv = &self.nodes[pred.0].value;
        assert_eq!(pv.numel(), target.len());
        assert_eq!(pv.numel(), mask.len());
        let count = mask.iter().filter(|m| **m).count();
        assert!(count > 0, "masked_mse: every entry masked");
        let mut acc = 0.0f64;
        for ((p, t), m) in pv.data().iter().zip(&target).zip(&mask) {
            if *m {
                let e = (*p - *t).as_f64();
                acc += e * e;
            }
        }
        let value = Tensor::scalar(T::lit(acc / count as f64));
        let needs = self.needs(pred);
        self.push(value, Op::MaskedMse { pred, target, mask, count }, needs)
    }

    /// Gradients of scalar node `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: NodeId) -> Grads<T> {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.nodes[loss.0].value.shape(), vec![T::one()]));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param => {
                    grads[id] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
                    let rows = xv.rows();
                    if self.needs(*x) {
                        let mut dx = vec![T::zero(); rows * d_in];
                        gemm(false, true, rows, d_out, d_in, g.data(), wv.data(), T::zero(), &mut dx);
                        accumulate(&mut grads, *x, Tensor::new(xv.shape(), dx));
                    }
                    if self.needs(*w) {
                        let mut dw = vec![T::zero(); d_in * d_out];
                        gemm(true, false, d_in, rows, d_out, xv.data(), g.data(), T::zero(), &mut dw);
                        accumulate(&mut grads, *w, Tensor::new(wv.shape(), dw));
                    }
                    if let Some(b) = b {
                        if self.needs(*b) {
                            accumulate(&mut grads, *b, Tensor::new(&[d_out], column_sums(g.data(), d_out)));
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddBroadcast { x, b } => {
                    if self.needs(*b) {
                        let bshape = self.nodes[b.0].value.shape().to_vec();
                        let n = self.nodes[b.0].value.numel();
                        accumulate(&mut grads, *b, Tensor::new(&bshape, column_sums(g.data(), n)));
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.nodes[x.0].value.data();
                    let d = g.data().iter().zip(xv).map(|(g, v)| if *v > T::zero() { *g } else { T::zero() }).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape(), d));
                }
                Op::Gelu { x, th } => {
                    let xv = self.nodes[x.0].value.data();
                    let d = g.data().iter().zip(xv).zip(th).map(|((g, v), t)| *g * gelu_grad(*v, *t)).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape(), d));
                }
                Op::Tanh(x) => {
                    let yv = node.value.data();
                    let d = g.data().iter().zip(yv).map(|(g, y)| *g * (T::one() - *y * *y)).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape(), d));
                }
                Op::Reshape(x) => {
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    accumulate(&mut grads, *x, g.reshape(&shape));
                }
                Op::Conv2d { x, w, b, geom, cols } => {
                    let rows = geom.batch * geom.out_h() * geom.out_w();
                    let wv = &self.nodes[w.0].value;
                    if self.needs(*w) {
                        let mut dw = vec![T::zero(); geom.patch() * geom.c_out];
                        gemm(true, false, geom.patch(), rows, geom.c_out, cols, g.data(), T::zero(), &mut dw);
                        accumulate(&mut grads, *w, Tensor::new(wv.shape(), dw));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, Tensor::new(&[geom.c_out], column_sums(g.data(), geom.c_out)));
                    }
                    if self.needs(*x) {
                        let mut dcols = vec![T::zero(); rows * geom.patch()];
                        gemm(false, true, rows, geom.c_out, geom.patch(), g.data(), wv.data(), T::zero(), &mut dcols);
                        let dx = col2im(&dcols, geom);
                        accumulate(&mut grads, *x, Tensor::new(&[geom.batch, geom.h, geom.w, geom.c_in], dx));
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let d = g.last_dim();
                    let gv = self.nodes[gamma.0].value.data();
                    if self.needs(*gamma) {
                        let mut dg = vec![T::zero(); d];
                        for (gr, xr) in g.data().chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                dg[j] = dg[j] + gr[j] * xr[j];
                            }
                        }
                        accumulate(&mut grads, *gamma, Tensor::new(&[d], dg));
                    }
                    if self.needs(*beta) {
                        accumulate(&mut grads, *beta, Tensor::new(&[d], column_sums(g.data(), d)));
                    }
                    if self.needs(*x) {
                        let dn = T::lit(d as f64);
                        let mut dx = vec![T::zero(); g.numel()];
                        for (r, (gr, xr)) in g.data().chunks(d).zip(xhat.chunks(d)).enumerate() {
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for j in 0..d {
                                let dxh = gr[j] * gv[j];
                                m1 = m1 + dxh;
                                m2 = m2 + dxh * xr[j];
                            }
                            m1 = m1 / dn;
                            m2 = m2 / dn;
                            for j in 0..d {
                                let dxh = gr[j] * gv[j];
                                dx[r * d + j] = rstd[r] * (dxh - m1 - xr[j] * m2);
                            }
                        }
                        accumulate(&mut grads, *x, Tensor::new(g.shape(), dx));
                    }
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let s = g.shape();
                    let (b, t, d) = (s[0], s[1], s[2]);
                    let dh = d / heads;
                    let scale = T::lit(1.0 / (dh as f64).sqrt());
                    let qv = self.nodes[q.0].value.data();
                    let kv = self.nodes[k.0].value.data();
                    let vv = self.nodes[v.0].value.data();
                    let go = g.data();
                    let mut dq = vec![T::zero(); b * t * d];
                    let mut dk = vec![T::zero(); b * t * d];
                    let mut dv = vec![T::zero(); b * t * d];
                    let mut dp = vec![T::zero(); t];
                    for bi in 0..b {
                        for h in 0..*heads {
                            let off = h * dh;
                            let p = &probs[(bi * heads + h) * t * t..(bi * heads + h + 1) * t * t];
                            let at = |i: usize| (bi * t + i) * d + off;
                            for i in 0..t {
                                let goi = &go[at(i)..at(i) + dh];
                                let mut dot_pp = T::zero();
                                for j in 0..t {
                                    let vj = &vv[at(j)..at(j) + dh];
                                    dp[j] = dot(goi, vj);
                                    dot_pp = dot_pp + dp[j] * p[i * t + j];
                                    let pij = p[i * t + j];
                                    for e in 0..dh {
                                        dv[at(j) + e] = dv[at(j) + e] + pij * goi[e];
                                    }
                                }
                                for j in 0..t {
                                    let ds = p[i * t + j] * (dp[j] - dot_pp) * scale;
                                    for e in 0..dh {
                                        dq[at(i) + e] = dq[at(i) + e] + ds * kv[at(j) + e];
                                        dk[at(j) + e] = dk[at(j) + e] + ds * qv[at(i) + e];
                                    }
                                }
                            }
                        }
                    }
                    let shape = g.shape().to_vec();
                    if self.needs(*q) {
                        accumulate(&mut grads, *q, Tensor::new(&shape, dq));
                    }
                    if self.needs(*k) {
                        accumulate(&mut grads, *k, Tensor::new(&shape, dk));
                    }
                    if self.needs(*v) {
                        accumulate(&mut grads, *v, Tensor::new(&shape, dv));
                    }
                }
                Op::Stack(xs) => {
                    let s = g.shape();
                    let (b, t, d) = (s[0], s[1], s[2]);
                    for (ti, x) in xs.iter().enumerate() {
                        if !self.needs(*x) {
                            continue;
                        }
                        let mut dx = Vec::with_capacity(b * d);
                        for bi in 0..b {
                            dx.extend_from_slice(&g.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d]);
                        }
                        accumulate(&mut grads, *x, Tensor::new(&[b, d], dx));
                    }
                }
                Op::Select { x, index, tokens } => {
                    let (b, d) = (g.shape()[0], g.shape()[1]);
                    let mut dx = vec![T::zero(); b * tokens * d];
                    for bi in 0..b {
                        dx[(bi * tokens + index) * d..(bi * tokens + index + 1) * d]
                            .copy_from_slice(&g.data()[bi * d..(bi + 1) * d]);
                    }
                    accumulate(&mut grads, *x, Tensor::new(&[b, *tokens, d], dx));
                }
                Op::GlobalAvgPool { x, hw } => {
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    let c = shape[3];
                    let inv = T::lit(1.0 / *hw as f64);
                    let mut dx = vec![T::zero(); shape.iter().product()];
                    for (bi, gr) in g.data().chunks(c).enumerate() {
                        for p in 0..*hw {
                            for (o, gv) in dx[(bi * hw + p) * c..(bi * hw + p + 1) * c].iter_mut().zip(gr) {
                                *o = *gv * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(&shape, dx));
                }
                Op::MaskedMse { pred, target, mask, count } => {
                    let pv = &self.nodes[pred.0].value;
                    let scale = g.data()[0] * T::lit(2.0 / *count as f64);
                    let d = pv
                        .data()
                        .iter()
                        .zip(target)
                        .zip(mask)
                        .map(|((p, t), m)| if *m { (*p - *t) * scale } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *pred, Tensor::new(pv.shape(), d));
                }
            }
        }

        let by_param = self.param_nodes.iter().map(|id| id.and_then(|id| grads[id.0].take())).collect();
        Grads { by_param }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums<T: Scalar>(data: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); width];
    for row in data.chunks(width) {
        for (o, v) in out.iter_mut().zip(row) {
            *o = *o + *v;
        }
    }
    out
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// `tanh(c·(x + a·x³))` of the tanh-form GELU, via one `exp`.
fn gelu_tanh<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(0.044715);
    let two = T::lit(2.0);
    let u = c * (x + a * x * x * x);
    // exp overflow gives +inf and the expression saturates at ±1 as it should
    T::one() - two / ((two * u).exp() + T::one())
}

/// Derivative of the GELU given `x` and its cached tanh term.
fn gelu_grad<T: Scalar>(x: T, th: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow, patch) = (g.out_h(), g.out_w(), g.patch());
    let mut cols = vec![T::zero(); g.batch * oh * ow * patch];
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * patch;
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c_in;
                        let dst = row + (ky * g.kernel + kx) * g.c_in;
                        cols[dst..dst + g.c_in].copy_from_slice(&x[src..src + g.c_in]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow, patch) = (g.out_h(), g.out_w(), g.patch());
    let mut x = vec![T::zero(); g.batch * g.h * g.w * g.c_in];
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * patch;
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c_in;
                        let src = row + (ky * g.kernel + kx) * g.c_in;
                        for c in 0..g.c_in {
                            x[dst + c] = x[dst + c] + cols[src + c];
                        }
                    }
                }
            }
        }
    }
    x
}
