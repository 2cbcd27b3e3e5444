//! Encoder-decoder transformer for continuous multichannel sequences.
//!
//! Dense projections replace token embeddings on both inputs. The encoder
//! reads the motor sequence and has an auxiliary head that reconstructs it.
//! The decoder reads the chemistry sequence under a causal mask, attends to
//! the encoder memory, and a regression head predicts the next chemistry frame
//! at every position.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{shape_err, Error, Result};
use crate::model::config::{ModelConfig, OutputActivation};
use crate::model::positional::positional_encoding;
use crate::nn::{AttnGeom, ParamSet, Tape, Var};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Mha {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
}

#[derive(Clone, Copy, Debug)]
struct FeedForward {
    inner: Dense,
    outer: Dense,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: Mha,
    norm1: Norm,
    ff: FeedForward,
    norm2: Norm,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: Mha,
    norm1: Norm,
    cross_attn: Mha,
    norm2: Norm,
    ff: FeedForward,
    norm3: Norm,
}

#[derive(Clone, Debug)]
struct Layout {
    enc_in: Dense,
    enc: Vec<EncoderLayer>,
    recon_hidden: Dense,
    recon_out: Dense,
    dec_in: Dense,
    dec: Vec<DecoderLayer>,
    head_hidden: Dense,
    head_out: Dense,
}

struct Builder<'a> {
    params: &'a mut ParamSet,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        let w = self.params.push_glorot(&format!("{name}.w"), fan_in, fan_out, &mut self.rng);
        let b = self.params.push(format!("{name}.b"), Mat::zeros(1, fan_out));
        Dense { w, b }
    }

    fn norm(&mut self, name: &str, width: usize) -> Norm {
        let g = self.params.push(format!("{name}.g"), Mat::filled(1, width, 1.0));
        let b = self.params.push(format!("{name}.b"), Mat::zeros(1, width));
        Norm { g, b }
    }

    fn mha(&mut self, name: &str, d: usize) -> Mha {
        Mha {
            q: self.dense(&format!("{name}.q"), d, d),
            k: self.dense(&format!("{name}.k"), d, d),
            v: self.dense(&format!("{name}.v"), d, d),
            o: self.dense(&format!("{name}.o"), d, d),
        }
    }

    fn ff(&mut self, name: &str, d: usize, inner: usize) -> FeedForward {
        FeedForward { inner: self.dense(&format!("{name}.ff1"), d, inner), outer: self.dense(&format!("{name}.ff2"), inner, d) }
    }
}

fn build_layout(cfg: &ModelConfig, params: &mut ParamSet, seed: u64) -> Layout {
    let d = cfg.d_model;
    let mut b = Builder { params, rng: ChaCha8Rng::seed_from_u64(seed) };
    let enc_in = b.dense("enc.in", cfg.feat_in, d);
    let enc = (0..cfg.n_layers)
        .map(|i| {
            let p = format!("enc.{i}");
            EncoderLayer {
                attn: b.mha(&format!("{p}.attn"), d),
                norm1: b.norm(&format!("{p}.norm1"), d),
                ff: b.ff(&p, d, cfg.d_ff),
                norm2: b.norm(&format!("{p}.norm2"), d),
            }
        })
        .collect();
    let recon_hidden = b.dense("recon.hidden", d, cfg.d_ff_head);
    let recon_out = b.dense("recon.out", cfg.d_ff_head, cfg.feat_in);
    let dec_in = b.dense("dec.in", cfg.feat_out, d);
    let dec = (0..cfg.n_layers)
        .map(|i| {
            let p = format!("dec.{i}");
            DecoderLayer {
                self_attn: b.mha(&format!("{p}.self"), d),
                norm1: b.norm(&format!("{p}.norm1"), d),
                cross_attn: b.mha(&format!("{p}.cross"), d),
                norm2: b.norm(&format!("{p}.norm2"), d),
                ff: b.ff(&p, d, cfg.d_ff),
                norm3: b.norm(&format!("{p}.norm3"), d),
            }
        })
        .collect();
    let head_hidden = b.dense("head.hidden", d, cfg.d_ff_head);
    let head_out = b.dense("head.out", cfg.d_ff_head, cfg.feat_out);
    Layout { enc_in, enc, recon_hidden, recon_out, dec_in, dec, head_hidden, head_out }
}

/// Whether a parameter belongs to the encoder side (encoder blocks and reconstruction head).
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("enc.") || name.starts_with("recon.")
}

/// Dropout on or off for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Attention weights per layer; entry `[layer][sequence · heads + head]` is a
/// `query_len x key_len` matrix with rows summing to one.
#[derive(Clone, Debug, Default)]
pub struct AttentionMaps {
    pub heads: usize,
    pub encoder: Vec<Vec<Mat>>,
    pub decoder_self: Vec<Vec<Mat>>,
    pub cross: Vec<Vec<Mat>>,
}

impl AttentionMaps {
    pub fn all(&self) -> impl Iterator<Item = &Mat> {
        self.encoder.iter().chain(&self.decoder_self).chain(&self.cross).flatten()
    }
}

/// Result of a forward pass over `batch` stacked sequences (rows are `batch · len`).
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Next-step chemistry at every position.
    pub prediction: Mat,
    /// Encoder reconstruction of the motor input, clamped to `[-1, 1]`.
    pub reconstruction: Mat,
    pub memory: Mat,
    pub decoder_hidden: Mat,
    pub attention: AttentionMaps,
    pub batch: usize,
    pub seq_len: usize,
}

impl ForwardOutput {
    /// Prediction at the final position of sequence `b`.
    pub fn last_prediction(&self, b: usize) -> &[f64] {
        self.prediction.row((b + 1) * self.seq_len - 1)
    }

    /// Mean of the decoder hidden state over the positions of sequence `b`.
    pub fn pooled_hidden(&self, b: usize) -> Vec<f64> {
        self.decoder_hidden.slice_rows(b * self.seq_len, self.seq_len).mean_rows()
    }
}

/// Tape handles produced while building a forward pass.
pub(crate) struct GraphOut {
    pub prediction: Var,
    pub recon: Var,
    pub memory: Var,
    pub hidden: Var,
    pub enc_attn: Vec<Var>,
    pub self_attn: Vec<Var>,
    pub cross_attn: Vec<Var>,
}

pub(crate) struct EncoderOut {
    pub memory: Var,
    pub recon: Var,
    pub attn: Vec<Var>,
}

/// Memoises one tape leaf per parameter.
pub(crate) struct Leaves<'a> {
    params: &'a ParamSet,
    trainable: bool,
    cache: HashMap<usize, Var>,
}

impl<'a> Leaves<'a> {
    pub fn new(params: &'a ParamSet, trainable: bool) -> Self {
        Self { params, trainable, cache: HashMap::new() }
    }

    fn get(&mut self, tape: &mut Tape, idx: usize) -> Var {
        *self.cache.entry(idx).or_insert_with(|| tape.param(idx, self.params.value(idx), self.trainable))
    }
}

#[derive(Clone, Debug)]
pub struct Transformer {
    cfg: ModelConfig,
    params: ParamSet,
    layout: Layout,
    ready: bool,
    train_step: u64,
}

impl Transformer {
    /// Freshly initialised (Glorot-uniform weights, zero biases, unit norm gains).
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::default();
        let layout = build_layout(&cfg, &mut params, seed);
        Ok(Self { cfg, params, layout, ready: false, train_step: 0 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Trained (or loaded from a trained checkpoint) and usable as a surrogate.
    pub fn is_ready(&self) -> bool {
        self.ready
    }

    pub fn set_ready(&mut self, ready: bool) {
        self.ready = ready;
    }

    pub fn train_step(&self) -> u64 {
        self.train_step
    }

    pub(crate) fn set_train_step(&mut self, step: u64) {
        self.train_step = step;
    }

    /// SHA-256 over every parameter's name and `f32` bytes.
    pub fn weights_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, value) in self.params.names().iter().zip(self.params.values()) {
            h.update(name.as_bytes());
            for v in value.as_slice() {
                h.update((*v as f32).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn check_input(&self, m: &Mat, width: usize, what: &str, batch: usize) -> Result<usize> {
        if m.cols() != width {
            return Err(shape_err(format!("{what} has {} features, model expects {width}", m.cols())));
        }
        if batch == 0 || m.rows() == 0 || m.rows() % batch != 0 {
            return Err(shape_err(format!("{what} has {} rows, not a multiple of batch {batch}", m.rows())));
        }
        Ok(m.rows() / batch)
    }

    fn tiled_pe(&self, len: usize, batch: usize) -> Mat {
        let pe = positional_encoding(len, self.cfg.d_model).expect("d_model validated even");
        let parts: Vec<&Mat> = std::iter::repeat_n(&pe, batch).collect();
        Mat::vstack(&parts).expect("same width")
    }

    fn dense(&self, tape: &mut Tape, leaves: &mut Leaves, x: Var, d: Dense) -> Var {
        let w = leaves.get(tape, d.w);
        let b = leaves.get(tape, d.b);
        tape.linear(x, w, b)
    }

    fn norm(&self, tape: &mut Tape, leaves: &mut Leaves, x: Var, n: Norm) -> Var {
        let g = leaves.get(tape, n.g);
        let b = leaves.get(tape, n.b);
        tape.layer_norm(x, g, b)
    }

    #[allow(clippy::too_many_arguments)]
    fn mha(&self, tape: &mut Tape, leaves: &mut Leaves, xq: Var, xkv: Var, m: &Mha, geom: AttnGeom) -> (Var, Var) {
        let q = self.dense(tape, leaves, xq, m.q);
        let k = self.dense(tape, leaves, xkv, m.k);
        let v = self.dense(tape, leaves, xkv, m.v);
        let a = tape.attention(q, k, v, geom);
        (self.dense(tape, leaves, a, m.o), a)
    }

    fn feed_forward(&self, tape: &mut Tape, leaves: &mut Leaves, x: Var, ff: &FeedForward) -> Var {
        let h = self.dense(tape, leaves, x, ff.inner);
        let h = tape.relu(h);
        self.dense(tape, leaves, h, ff.outer)
    }

    pub(crate) fn build_encoder(&self, tape: &mut Tape, leaves: &mut Leaves, motors: Var, batch: usize, len: usize) -> EncoderOut {
        let p = self.cfg.dropout;
        let geom = AttnGeom { batch, heads: self.cfg.n_heads, q_len: len, k_len: len, causal: false };
        let x = self.dense(tape, leaves, motors, self.layout.enc_in);
        let mut x = tape.add_const(x, &self.tiled_pe(len, batch));
        x = tape.dropout(x, p);
        let mut attn = Vec::with_capacity(self.layout.enc.len());
        for layer in &self.layout.enc {
            let (a, weights) = self.mha(tape, leaves, x, x, &layer.attn, geom);
            attn.push(weights);
            let a = tape.dropout(a, p);
            let s = tape.add(x, a);
            x = self.norm(tape, leaves, s, layer.norm1);
            let f = self.feed_forward(tape, leaves, x, &layer.ff);
            let f = tape.dropout(f, p);
            let s = tape.add(x, f);
            x = self.norm(tape, leaves, s, layer.norm2);
        }
        let h = self.dense(tape, leaves, x, self.layout.recon_hidden);
        let h = tape.relu(h);
        let r = self.dense(tape, leaves, h, self.layout.recon_out);
        let recon = tape.elu(r);
        EncoderOut { memory: x, recon, attn }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build_decoder(
        &self,
        tape: &mut Tape,
        leaves: &mut Leaves,
        chem: Var,
        memory: Var,
        batch: usize,
        len: usize,
        mem_len: usize,
    ) -> (Var, Var, Vec<Var>, Vec<Var>) {
        let p = self.cfg.dropout;
        let heads = self.cfg.n_heads;
        let self_geom = AttnGeom { batch, heads, q_len: len, k_len: len, causal: true };
        let cross_geom = AttnGeom { batch, heads, q_len: len, k_len: mem_len, causal: false };
        let y = self.dense(tape, leaves, chem, self.layout.dec_in);
        let mut y = tape.add_const(y, &self.tiled_pe(len, batch));
        y = tape.dropout(y, p);
        let mut self_attn = Vec::new();
        let mut cross_attn = Vec::new();
        for layer in &self.layout.dec {
            let (a, w) = self.mha(tape, leaves, y, y, &layer.self_attn, self_geom);
            self_attn.push(w);
            let a = tape.dropout(a, p);
            let s = tape.add(y, a);
            y = self.norm(tape, leaves, s, layer.norm1);
            let (c, w) = self.mha(tape, leaves, y, memory, &layer.cross_attn, cross_geom);
            cross_attn.push(w);
            let c = tape.dropout(c, p);
            let s = tape.add(y, c);
            y = self.norm(tape, leaves, s, layer.norm2);
            let f = self.feed_forward(tape, leaves, y, &layer.ff);
            let f = tape.dropout(f, p);
            let s = tape.add(y, f);
            y = self.norm(tape, leaves, s, layer.norm3);
        }
        let h = self.dense(tape, leaves, y, self.layout.head_hidden);
        let h = tape.relu(h);
        let o = self.dense(tape, leaves, h, self.layout.head_out);
        let pred = match self.cfg.output_activation {
            OutputActivation::Relu => tape.relu(o),
            OutputActivation::Sigmoid => tape.sigmoid(o),
        };
        (pred, y, self_attn, cross_attn)
    }

    pub(crate) fn build(&self, tape: &mut Tape, leaves: &mut Leaves, motors: Var, chem: Var, batch: usize) -> Result<GraphOut> {
        let len = self.check_input(tape.value(motors), self.cfg.feat_in, "motor input", batch)?;
        let clen = self.check_input(tape.value(chem), self.cfg.feat_out, "chemistry input", batch)?;
        if len != clen {
            return Err(shape_err(format!("motor sequences of {len} steps vs chemistry of {clen}")));
        }
        let enc = self.build_encoder(tape, leaves, motors, batch, len);
        let (prediction, hidden, self_attn, cross_attn) = self.build_decoder(tape, leaves, chem, enc.memory, batch, len, len);
        Ok(GraphOut { prediction, recon: enc.recon, memory: enc.memory, hidden, enc_attn: enc.attn, self_attn, cross_attn })
    }

    fn run<T>(&self, mode: Mode<'_>, f: impl FnOnce(&mut Tape) -> Result<T>) -> Result<T> {
        match mode {
            Mode::Eval => f(&mut Tape::eval()),
            Mode::Train(rng) => {
                let mut tape = Tape::train(rng.clone());
                let out = f(&mut tape)?;
                *rng = tape.into_rng().expect("train tape keeps its rng");
                Ok(out)
            }
        }
    }

    fn maps(tape: &Tape, vars: &[Var]) -> Vec<Vec<Mat>> {
        vars.iter().map(|v| tape.attention_weights(*v).map(<[Mat]>::to_vec).unwrap_or_default()).collect()
    }

    /// Encoder only: `(memory, reconstruction)` for one motor sequence.
    pub fn encoder_forward(&self, motors: &Mat, mode: Mode<'_>) -> Result<(Mat, Mat)> {
        let len = self.check_input(motors, self.cfg.feat_in, "motor input", 1)?;
        self.run(mode, |tape| {
            let mut leaves = Leaves::new(&self.params, false);
            let m = tape.constant(motors.clone());
            let out = self.build_encoder(tape, &mut leaves, m, 1, len);
            Ok((tape.value(out.memory).clone(), tape.value(out.recon).clone()))
        })
    }

    /// Decoder only, against a memory from [`Transformer::encoder_forward`]:
    /// `(prediction, decoder_hidden, attention)` where `attention` holds the
    /// decoder self- and cross-attention maps.
    pub fn decoder_forward(&self, chem_in: &Mat, memory: &Mat, mode: Mode<'_>) -> Result<(Mat, Mat, AttentionMaps)> {
        let len = self.check_input(chem_in, self.cfg.feat_out, "chemistry input", 1)?;
        if memory.cols() != self.cfg.d_model || memory.rows() == 0 {
            return Err(shape_err(format!("memory is {:?}, expected (_, {})", memory.shape(), self.cfg.d_model)));
        }
        self.run(mode, |tape| {
            let mut leaves = Leaves::new(&self.params, false);
            let c = tape.constant(chem_in.clone());
            let m = tape.constant(memory.clone());
            let (pred, hidden, sa, ca) = self.build_decoder(tape, &mut leaves, c, m, 1, len, memory.rows());
            let attention = AttentionMaps {
                heads: self.cfg.n_heads,
                encoder: Vec::new(),
                decoder_self: Self::maps(tape, &sa),
                cross: Self::maps(tape, &ca),
            };
            Ok((tape.value(pred).clone(), tape.value(hidden).clone(), attention))
        })
    }

    /// Full pass over one sequence.
    pub fn model_forward(&self, motors: &Mat, chem_in: &Mat, mode: Mode<'_>) -> Result<ForwardOutput> {
        self.forward_batch(motors, chem_in, 1, mode)
    }

    /// Full pass over `batch` sequences stacked along rows.
    pub fn forward_batch(&self, motors: &Mat, chem_in: &Mat, batch: usize, mode: Mode<'_>) -> Result<ForwardOutput> {
        self.run(mode, |tape| {
            let mut leaves = Leaves::new(&self.params, false);
            let m = tape.constant(motors.clone());
            let c = tape.constant(chem_in.clone());
            let g = self.build(tape, &mut leaves, m, c, batch)?;
            let seq_len = motors.rows() / batch;
            Ok(ForwardOutput {
                prediction: tape.value(g.prediction).clone(),
                reconstruction: tape.value(g.recon).map(|v| v.clamp(-1.0, 1.0)),
                memory: tape.value(g.memory).clone(),
                decoder_hidden: tape.value(g.hidden).clone(),
                attention: AttentionMaps {
                    heads: self.cfg.n_heads,
                    encoder: Self::maps(tape, &g.enc_attn),
                    decoder_self: Self::maps(tape, &g.self_attn),
                    cross: Self::maps(tape, &g.cross_attn),
                },
                batch,
                seq_len,
            })
        })
    }

    /// Final-position prediction for one window pair.
    pub fn predict_next(&self, motors: &Mat, chem: &Mat) -> Result<Vec<f64>> {
        let out = self.model_forward(motors, chem, Mode::Eval)?;
        Ok(out.last_prediction(0).to_vec())
    }

    pub(crate) fn from_parts(cfg: ModelConfig, params: ParamSet, ready: bool, train_step: u64) -> Result<Self> {
        let fresh = Self::new(cfg, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, architecture needs {}",
                params.len(),
                fresh.params.len()
            )));
        }
        let mut ordered = fresh.params.clone();
        for (i, name) in fresh.params.names().iter().enumerate() {
            let j = params.find(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            let v = params.value(j);
            if v.shape() != fresh.params.value(i).shape() {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    v.shape(),
                    fresh.params.value(i).shape()
                )));
            }
            *ordered.value_mut(i) = v.clone();
        }
        Ok(Self { params: ordered, ready, train_step, ..fresh })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, d_ff_head: 16, seq_len: 6, feat_in: 3, feat_out: 3, dropout: 0.0, ..ModelConfig::default() }
    }

    fn inputs(len: usize, feat: usize, seed: f64) -> (Mat, Mat) {
        let m = Mat::from_fn(len, feat, |i, j| ((i * feat + j) as f64 * 0.61 + seed).sin());
        let c = Mat::from_fn(len, feat, |i, j| ((i * feat + j) as f64 * 0.29 + seed).cos().abs());
        (m, c)
    }

    #[test]
    fn default_shapes() {
        let model = Transformer::new(ModelConfig::default(), 1).unwrap();
        let (m, c) = inputs(150, 25, 0.0);
        let m = m.map(|v| v.clamp(-1.0, 1.0));
        let (memory, recon) = model.encoder_forward(&m, Mode::Eval).unwrap();
        assert_eq!(memory.shape(), (150, 128));
        assert_eq!(recon.shape(), (150, 25));
        let (pred, hidden, maps) = model.decoder_forward(&c, &memory, Mode::Eval).unwrap();
        assert_eq!(pred.shape(), (150, 25));
        assert_eq!(hidden.shape(), (150, 128));
        assert_eq!(maps.cross.len(), 4);
        assert_eq!(maps.cross[0].len(), 8);
        assert!(pred.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sigmoid_head_range() {
        let cfg = ModelConfig { output_activation: OutputActivation::Sigmoid, ..tiny() };
        let model = Transformer::new(cfg, 2).unwrap();
        let (m, c) = inputs(6, 3, 0.5);
        let out = model.model_forward(&m, &c, Mode::Eval).unwrap();
        assert!(out.prediction.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn batch_matches_single_sequences() {
        let model = Transformer::new(tiny(), 3).unwrap();
        let (m1, c1) = inputs(6, 3, 0.1);
        let (m2, c2) = inputs(6, 3, 0.9);
        let m = Mat::vstack(&[&m1, &m2]).unwrap();
        let c = Mat::vstack(&[&c1, &c2]).unwrap();
        let both = model.forward_batch(&m, &c, 2, Mode::Eval).unwrap();
        let second = model.model_forward(&m2, &c2, Mode::Eval).unwrap();
        assert!(both.prediction.slice_rows(6, 6).max_abs_diff(&second.prediction) < 1e-12);
    }

    #[test]
    fn eval_is_deterministic_and_train_mode_is_not() {
        let cfg = ModelConfig { dropout: 0.3, ..tiny() };
        let model = Transformer::new(cfg, 4).unwrap();
        let (m, c) = inputs(6, 3, 0.2);
        let a = model.model_forward(&m, &c, Mode::Eval).unwrap();
        let b = model.model_forward(&m, &c, Mode::Eval).unwrap();
        assert_eq!(a.prediction, b.prediction);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = model.model_forward(&m, &c, Mode::Train(&mut rng)).unwrap();
        assert_ne!(a.prediction, t.prediction);
    }

    #[test]
    fn shape_errors() {
        let model = Transformer::new(tiny(), 5).unwrap();
        let (m, c) = inputs(6, 3, 0.0);
        assert!(matches!(model.model_forward(&Mat::zeros(6, 4), &c, Mode::Eval), Err(Error::Shape(_))));
        assert!(matches!(model.model_forward(&m, &Mat::zeros(5, 3), Mode::Eval), Err(Error::Shape(_))));
        assert!(matches!(model.decoder_forward(&c, &Mat::zeros(6, 7), Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let model = Transformer::new(tiny(), 6).unwrap();
        let (m, c) = inputs(6, 3, 0.7);
        let out = model.model_forward(&m, &c, Mode::Eval).unwrap();
        let mut n = 0;
        for w in out.attention.all() {
            for r in w.row_iter() {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(r.iter().all(|&x| x >= 0.0));
                n += 1;
            }
        }
        assert_eq!(n, 3 * 2 * 6);
    }

    #[test]
    fn weights_hash_tracks_parameters() {
        let mut model = Transformer::new(tiny(), 7).unwrap();
        let h = model.weights_hash();
        assert_eq!(h, Transformer::new(tiny(), 7).unwrap().weights_hash());
        model.params_mut().value_mut(0).as_mut_slice()[0] += 0.5;
        assert_ne!(h, model.weights_hash());
    }
}
