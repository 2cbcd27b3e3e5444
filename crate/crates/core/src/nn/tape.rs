//! A small reverse-mode differentiation tape over 2-D matrices.
//!
//! Every op records its inputs and whatever it needs for the backward pass;
//! `backward` walks the tape once in reverse. Ops are coarse (a whole linear
//! layer, a whole multi-head attention block) so that one transformer forward
//! is a few dozen nodes rather than thousands.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::attention::softmax_row;
use crate::tensor::{gemm, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-6;

enum Op {
    Leaf,
    Param(usize),
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    AddConst(Var),
    Affine { x: Var, scale: f64 },
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, geom: AttnGeom, probs: Vec<Mat> },
    VStack(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ScaledMse { pred: Var, target: Mat, denom: Vec<f64> },
    Mse { pred: Var, target: Mat },
    DotConst { x: Var, coeffs: Mat },
    Combine(Vec<(Var, f64)>),
}

#[derive(Clone, Copy, Debug)]
pub struct AttnGeom {
    pub batch: usize,
    pub heads: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub causal: bool,
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation. `train` enables dropout.
pub struct Tape {
    nodes: Vec<Node>,
    rng: Option<ChaCha8Rng>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::eval()
    }
}

impl Tape {
    /// Deterministic tape: dropout is the identity.
    pub fn eval() -> Self {
        Self { nodes: Vec::with_capacity(128), rng: None }
    }

    /// Training tape drawing dropout masks from `rng`.
    pub fn train(rng: ChaCha8Rng) -> Self {
        Self { nodes: Vec::with_capacity(128), rng: Some(rng) }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    /// Hands back the dropout stream so the caller can continue it.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is wanted.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A parameter leaf tagged with its index in the caller's parameter list.
    pub fn param(&mut self, index: usize, value: &Mat, trainable: bool) -> Var {
        self.push(value.clone(), Op::Param(index), trainable)
    }

    /// `x·W + b` with `W` of shape `in x out` and `b` of shape `1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(xv.cols(), wv.rows(), "linear input width");
        let mut y = Mat::zeros(xv.rows(), wv.cols());
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(bv.row(0));
        }
        gemm(xv.view(), wv.view(), y.view_mut(), 1.0);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(y, Op::Linear { x, w, b }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(y, Op::Add(a, b), ng)
    }

    pub fn add_const(&mut self, a: Var, c: &Mat) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(c);
        let ng = self.ng(a);
        self.push(y, Op::AddConst(a), ng)
    }

    /// `scale·x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let y = self.value(x).map(|v| scale * v + shift);
        let ng = self.ng(x);
        self.push(y, Op::Affine { x, scale }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(y, Op::Relu(x), ng)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        let ng = self.ng(x);
        self.push(y, Op::Elu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(y, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        let ng = self.ng(x);
        self.push(y, Op::Tanh(x), ng)
    }

    /// Row-wise layer normalisation with learned gain and bias (`1 x cols`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let (g, b) = (self.value(gain).row(0), self.value(bias).row(0));
        let mut xhat = Mat::zeros(rows, cols);
        let mut y = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            let (hr, yr) = (xhat.row_mut(r), y.row_mut(r));
            for c in 0..cols {
                hr[c] = (row[c] - mean) * is;
                yr[c] = hr[c] * g[c] + b[c];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(y, Op::LayerNorm { x, gain, bias, xhat, inv_std }, ng)
    }

    /// Inverted dropout; identity on an eval tape or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let Some(rng) = self.rng.as_mut() else { return x };
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.nodes[x.0].value.len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 }).collect();
        let xv = self.value(x);
        let mut y = xv.clone();
        for (o, m) in y.as_mut_slice().iter_mut().zip(&mask) {
            *o *= m;
        }
        let ng = self.ng(x);
        self.push(y, Op::Dropout { x, mask }, ng)
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `(batch·q_len) x d`, `k` and `v` are `(batch·k_len) x d`; head `h`
    /// uses columns `h·d/heads .. (h+1)·d/heads`. Returns the concatenated head
    /// outputs; the per-(sequence, head) weight matrices are kept on the tape.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, geom: AttnGeom) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        assert_eq!(d % geom.heads, 0, "model width must split evenly over heads");
        assert_eq!(qv.rows(), geom.batch * geom.q_len, "query rows");
        assert_eq!(kv.rows(), geom.batch * geom.k_len, "key rows");
        assert!(!geom.causal || geom.q_len == geom.k_len, "causal attention needs square scores");
        let dk = d / geom.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = Mat::zeros(qv.rows(), d);
        let mut probs = Vec::with_capacity(geom.batch * geom.heads);
        for b in 0..geom.batch {
            for h in 0..geom.heads {
                let mut p = Mat::zeros(geom.q_len, geom.k_len);
                gemm(
                    qv.col_block(b * geom.q_len, geom.q_len, h * dk, dk),
                    kv.col_block(b * geom.k_len, geom.k_len, h * dk, dk).t(),
                    p.view_mut(),
                    0.0,
                );
                p.scale(scale);
                for i in 0..geom.q_len {
                    let ok = if geom.causal { softmax_row(p.row_mut(i), |j| j <= i) } else { softmax_row(p.row_mut(i), |_| true) };
                    debug_assert!(ok);
                }
                gemm(
                    p.view(),
                    vv.col_block(b * geom.k_len, geom.k_len, h * dk, dk),
                    out.col_block_mut(b * geom.q_len, geom.q_len, h * dk, dk),
                    0.0,
                );
                probs.push(p);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(out, Op::Attention { q, k, v, geom, probs }, ng)
    }

    /// Attention weights recorded by an attention node, indexed `[sequence·heads + head]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[Mat]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|p| self.value(*p)).collect();
        let y = Mat::vstack(&mats).expect("vstack column mismatch");
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(y, Op::VStack(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let y = self.value(x).slice_rows(start, len);
        let ng = self.ng(x);
        self.push(y, Op::SliceRows { x, start }, ng)
    }

    /// Mean over rows of `mse_row / max(max(target_row), eps)`.
    pub fn scaled_mse(&mut self, pred: Var, target: &Mat, eps: f64) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "scaled_mse shapes");
        let cols = pv.cols() as f64;
        let mut denom = Vec::with_capacity(pv.rows());
        let mut total = 0.0;
        for r in 0..pv.rows() {
            let tr = target.row(r);
            let mx = tr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dn = mx.max(eps);
            let mse: f64 = pv.row(r).iter().zip(tr).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / cols;
            total += mse / dn;
            denom.push(dn);
        }
        let loss = total / pv.rows().max(1) as f64;
        let ng = self.ng(pred);
        self.push(Mat::filled(1, 1, loss), Op::ScaledMse { pred, target: target.clone(), denom }, ng)
    }

    pub fn mse(&mut self, pred: Var, target: &Mat) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "mse shapes");
        let loss = pv.as_slice().iter().zip(target.as_slice()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>()
            / pv.len().max(1) as f64;
        let ng = self.ng(pred);
        self.push(Mat::filled(1, 1, loss), Op::Mse { pred, target: target.clone() }, ng)
    }

    /// `Σ x ⊙ coeffs`, a scalar.
    pub fn dot_const(&mut self, x: Var, coeffs: &Mat) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), coeffs.shape(), "dot_const shapes");
        let s = xv.as_slice().iter().zip(coeffs.as_slice()).map(|(a, b)| a * b).sum();
        let ng = self.ng(x);
        self.push(Mat::filled(1, 1, s), Op::DotConst { x, coeffs: coeffs.clone() }, ng)
    }

    /// Weighted sum of scalars.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let s = terms.iter().map(|(v, w)| w * self.value(*v).get(0, 0)).sum();
        let ng = terms.iter().any(|(v, _)| self.ng(*v));
        self.push(Mat::filled(1, 1, s), Op::Combine(terms.to_vec()), ng)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    /// Gradients of the scalar `output` with respect to every node on the tape.
    pub fn backward(&self, output: Var) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let out = &self.nodes[output.0].value;
        grads[output.0] = Some(Mat::filled(out.rows(), out.cols(), 1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, contrib: Mat| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.ng(*x) {
                    let mut dx = Mat::zeros(xv.rows(), xv.cols());
                    gemm(g.view(), wv.view().t(), dx.view_mut(), 0.0);
                    acc(*x, dx);
                }
                if self.ng(*w) {
                    let mut dw = Mat::zeros(wv.rows(), wv.cols());
                    gemm(xv.view().t(), g.view(), dw.view_mut(), 0.0);
                    acc(*w, dw);
                }
                if self.ng(*b) {
                    acc(*b, Mat::from_vec(1, g.cols(), col_sums(g)).unwrap());
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::Affine { x, scale } => acc(*x, g.map(|v| v * scale)),
            Op::Relu(x) => acc(*x, g.zip_map(self.value(*x), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::Elu(x) => acc(*x, g.zip_map(&node.value, |g, y| if y > 0.0 { g } else { g * (y + 1.0) })),
            Op::Sigmoid(x) => acc(*x, g.zip_map(&node.value, |g, y| g * y * (1.0 - y))),
            Op::Tanh(x) => acc(*x, g.zip_map(&node.value, |g, y| g * (1.0 - y * y))),
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gv = self.value(*gain).row(0);
                let (rows, cols) = xhat.shape();
                if self.ng(*x) {
                    let mut dx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let (gr, hr) = (g.row(r), xhat.row(r));
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..cols {
                            let d = gr[c] * gv[c];
                            mean_d += d;
                            mean_dh += d * hr[c];
                        }
                        mean_d /= cols as f64;
                        mean_dh /= cols as f64;
                        let dr = dx.row_mut(r);
                        for c in 0..cols {
                            dr[c] = inv_std[r] * (gr[c] * gv[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                    acc(*x, dx);
                }
                if self.ng(*gain) {
                    let mut dg = vec![0.0; cols];
                    for r in 0..rows {
                        for (c, d) in dg.iter_mut().enumerate() {
                            *d += g.get(r, c) * xhat.get(r, c);
                        }
                    }
                    acc(*gain, Mat::from_vec(1, cols, dg).unwrap());
                }
                if self.ng(*bias) {
                    acc(*bias, Mat::from_vec(1, cols, col_sums(g)).unwrap());
                }
            }
            Op::Dropout { x, mask } => {
                let mut dx = g.clone();
                for (d, m) in dx.as_mut_slice().iter_mut().zip(mask) {
                    *d *= m;
                }
                acc(*x, dx);
            }
            Op::Attention { q, k, v, geom, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qv.cols();
                let dk = d / geom.heads;
                let scale = 1.0 / (dk as f64).sqrt();
                let mut dq = Mat::zeros(qv.rows(), d);
                let mut dkm = Mat::zeros(kv.rows(), d);
                let mut dv = Mat::zeros(vv.rows(), d);
                let (lq, lk) = (geom.q_len, geom.k_len);
                for b in 0..geom.batch {
                    for h in 0..geom.heads {
                        let p = &probs[b * geom.heads + h];
                        let g_blk = g.col_block(b * lq, lq, h * dk, dk);
                        // dV = Pᵀ·dOut
                        gemm(p.view().t(), g_blk, dv.col_block_mut(b * lk, lk, h * dk, dk), 0.0);
                        // dP = dOut·Vᵀ, then through the softmax
                        let mut ds = Mat::zeros(lq, lk);
                        gemm(g_blk, vv.col_block(b * lk, lk, h * dk, dk).t(), ds.view_mut(), 0.0);
                        for i in 0..lq {
                            let pr = p.row(i);
                            let dr = ds.row_mut(i);
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            for (dd, pp) in dr.iter_mut().zip(pr) {
                                *dd = pp * (*dd - dot) * scale;
                            }
                        }
                        gemm(ds.view(), kv.col_block(b * lk, lk, h * dk, dk), dq.col_block_mut(b * lq, lq, h * dk, dk), 0.0);
                        gemm(ds.view().t(), qv.col_block(b * lq, lq, h * dk, dk), dkm.col_block_mut(b * lk, lk, h * dk, dk), 0.0);
                    }
                }
                acc(*q, dq);
                acc(*k, dkm);
                acc(*v, dv);
            }
            Op::VStack(parts) => {
                let mut row = 0;
                for p in parts {
                    let n = self.value(*p).rows();
                    acc(*p, g.slice_rows(row, n));
                    row += n;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let mut dx = Mat::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    dx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                acc(*x, dx);
            }
            Op::ScaledMse { pred, target, denom } => {
                let pv = self.value(*pred);
                let (rows, cols) = pv.shape();
                let s = g.get(0, 0) * 2.0 / (rows as f64 * cols as f64);
                let mut dp = Mat::zeros(rows, cols);
                for r in 0..rows {
                    let k = s / denom[r];
                    for c in 0..cols {
                        dp.set(r, c, k * (pv.get(r, c) - target.get(r, c)));
                    }
                }
                acc(*pred, dp);
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let s = g.get(0, 0) * 2.0 / pv.len() as f64;
                acc(*pred, pv.zip_map(target, |p, t| s * (p - t)));
            }
            Op::DotConst { x, coeffs } => {
                let s = g.get(0, 0);
                acc(*x, coeffs.map(|c| c * s));
            }
            Op::Combine(terms) => {
                for (v, w) in terms {
                    acc(*v, Mat::filled(1, 1, g.get(0, 0) * w));
                }
            }
        }
    }

    /// Parameter gradients as `(parameter index, gradient)` pairs.
    pub fn param_grads(&self, grads: &Grads) -> Vec<(usize, Mat)> {
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(p) = node.op {
                if let Some(g) = &grads.grads[i] {
                    out.push((p, g.clone()));
                }
            }
        }
        out
    }
}

pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn col_sums(m: &Mat) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for r in m.row_iter() {
        for (a, b) in s.iter_mut().zip(r) {
            *a += b;
        }
    }
    s
}
