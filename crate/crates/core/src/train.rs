//! Cyclic training: encoder-only epochs on the reconstruction loss, then
//! full-model epochs on the scaled prediction loss plus the reconstruction term.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::transformer::Leaves;
use crate::model::{Checkpoint, Transformer};
use crate::nn::{lr_schedule, Adam, AdamConfig, Tape};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Encoder and reconstruction head only, plain MSE on the motor input.
    Encoder,
    /// All weights, scaled prediction MSE plus weighted reconstruction MSE.
    Full,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Encoder => "encoder",
            Phase::Full => "full",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    /// The optimised objective.
    pub total: f64,
    /// Scaled prediction MSE; absent in encoder phases.
    pub pred: Option<f64>,
    pub recon: f64,
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub cycle: usize,
    pub phase: Phase,
    /// Epoch index within its phase.
    pub epoch: usize,
    pub loss_pred: Option<f64>,
    pub loss_recon: f64,
}

/// Builds the loss of `phase` for one batch on `tape`, parameters as leaves.
fn objective(model: &Transformer, batch: &Batch, phase: Phase, tape: &mut Tape) -> Result<(crate::nn::Var, LossParts)> {
    let cfg = model.config();
    let mut leaves = Leaves::new(model.params(), true);
    let motors = tape.constant(batch.motors.clone());
    match phase {
        Phase::Encoder => {
            if batch.motors.cols() != cfg.feat_in {
                return Err(Error::Shape(format!("batch has {} motor features, model expects {}", batch.motors.cols(), cfg.feat_in)));
            }
            let enc = model.build_encoder(tape, &mut leaves, motors, batch.size, batch.seq_len);
            let loss = tape.mse(enc.recon, &batch.motors);
            let recon = tape.scalar(loss);
            Ok((loss, LossParts { total: recon, pred: None, recon }))
        }
        Phase::Full => {
            let chem = tape.constant(batch.chem_in.clone());
            let g = model.build(tape, &mut leaves, motors, chem, batch.size)?;
            if tape.value(g.prediction).shape() != batch.chem_target.shape() {
                return Err(Error::Shape("target shape differs from prediction".into()));
            }
            let lp = tape.scaled_mse(g.prediction, &batch.chem_target, cfg.eps_loss);
            let lr = tape.mse(g.recon, &batch.motors);
            let loss = tape.combine(&[(lp, 1.0), (lr, cfg.recon_weight)]);
            let parts = LossParts { total: tape.scalar(loss), pred: Some(tape.scalar(lp)), recon: tape.scalar(lr) };
            Ok((loss, parts))
        }
    }
}

/// Loss of one batch and its gradient for every parameter that takes part
/// in `phase`. With `rng` the pass runs in training mode (dropout on).
pub fn loss_and_grads(
    model: &Transformer,
    batch: &Batch,
    phase: Phase,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(LossParts, Vec<(usize, Mat)>)> {
    let sigma = model.config().chem_noise;
    let noisy;
    let batch = match rng.as_deref_mut() {
        Some(r) if phase == Phase::Full && sigma > 0.0 => {
            noisy = with_chem_noise(batch, sigma, r)?;
            &noisy
        }
        _ => batch,
    };
    let mut tape = match &rng {
        Some(r) => Tape::train((*r).clone()),
        None => Tape::eval(),
    };
    let (loss, parts) = objective(model, batch, phase, &mut tape)?;
    let grads = tape.backward(loss);
    let pg = tape.param_grads(&grads);
    if let Some(r) = rng {
        *r = tape.into_rng().expect("training tape keeps its rng");
    }
    Ok((parts, pg))
}

fn with_chem_noise(batch: &Batch, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = batch.clone();
    for v in out.chem_in.as_mut_slice() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Eval-mode loss of one batch.
pub fn batch_loss(model: &Transformer, batch: &Batch, phase: Phase) -> Result<LossParts> {
    let mut tape = Tape::eval();
    Ok(objective(model, batch, phase, &mut tape)?.1)
}

/// Size-weighted eval-mode loss over several batches.
pub fn dataset_loss(model: &Transformer, batches: &[Batch], phase: Phase) -> Result<LossParts> {
    if batches.is_empty() {
        return Err(Error::EmptyInput("no batches".into()));
    }
    let mut acc = Accum::default();
    for b in batches {
        acc.add(&batch_loss(model, b, phase)?, b.size);
    }
    Ok(acc.mean())
}

#[derive(Default)]
struct Accum {
    total: f64,
    pred: f64,
    recon: f64,
    has_pred: bool,
    n: usize,
}

impl Accum {
    fn add(&mut self, p: &LossParts, weight: usize) {
        let w = weight as f64;
        self.total += w * p.total;
        self.recon += w * p.recon;
        if let Some(v) = p.pred {
            self.pred += w * v;
            self.has_pred = true;
        }
        self.n += weight;
    }

    fn mean(&self) -> LossParts {
        let n = self.n.max(1) as f64;
        LossParts { total: self.total / n, pred: self.has_pred.then(|| self.pred / n), recon: self.recon / n }
    }
}

/// Runs `n_cycles` of (encoder epochs, full epochs) over `batches`.
///
/// A resumed run passes the optimiser state saved with the checkpoint; the
/// step counter (and so the learning-rate schedule) continues from the
/// model's. `on_epoch` sees each history row as soon as it is recorded.
pub struct CyclicTrainer {
    model: Transformer,
    opt: Adam,
    rng: ChaCha8Rng,
    shuffle: bool,
}

impl CyclicTrainer {
    pub fn new(model: Transformer, optimizer: Option<Adam>, seed: u64) -> Self {
        let opt = optimizer.unwrap_or_else(|| Adam::new(model.params(), AdamConfig::default()));
        let rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(model.train_step()));
        Self { model, opt, rng, shuffle: true }
    }

    /// Visit batches in the given order every epoch instead of reshuffling.
    pub fn keep_order(mut self) -> Self {
        self.shuffle = false;
        self
    }

    pub fn model(&self) -> &Transformer {
        &self.model
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::of(&self.model, Some(&self.opt))
    }

    fn epoch(&mut self, batches: &[Batch], phase: Phase, last_good: &Checkpoint) -> Result<LossParts> {
        let mut order: Vec<usize> = (0..batches.len()).collect();
        if self.shuffle {
            order.shuffle(&mut self.rng);
        }
        let train_mode = self.model.config().dropout > 0.0 || self.model.config().chem_noise > 0.0;
        let mut acc = Accum::default();
        for &i in &order {
            let b = &batches[i];
            let rng = train_mode.then_some(&mut self.rng);
            let (parts, grads) = loss_and_grads(&self.model, b, phase, rng)?;
            let step = self.model.train_step() + 1;
            let finite = parts.total.is_finite() && grads.iter().all(|(_, g)| g.is_finite());
            if !finite {
                return Err(Error::TrainingDiverged { step, last_good: Some(Box::new(last_good.clone())) });
            }
            let cfg = self.model.config();
            let lr = lr_schedule(step, cfg.d_model, cfg.warmup_steps)?;
            self.opt.step(self.model.params_mut(), &grads, lr);
            self.model.set_train_step(step);
            acc.add(&parts, b.size);
        }
        Ok(acc.mean())
    }

    pub fn run(&mut self, batches: &[Batch], mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Vec<EpochRecord>> {
        if batches.is_empty() {
            return Err(Error::EmptyInput("training needs at least one batch".into()));
        }
        let cfg = self.model.config().clone();
        let mut history = Vec::with_capacity(cfg.total_epochs());
        let mut last_good = self.checkpoint();
        for cycle in 0..cfg.n_cycles {
            let plan = [(Phase::Encoder, cfg.encoder_epochs_per_cycle), (Phase::Full, cfg.full_epochs_per_cycle)];
            for (phase, epochs) in plan {
                for epoch in 0..epochs {
                    let parts = self.epoch(batches, phase, &last_good)?;
                    let rec = EpochRecord { cycle, phase, epoch, loss_pred: parts.pred, loss_recon: parts.recon };
                    on_epoch(&rec);
                    history.push(rec);
                    last_good = self.checkpoint();
                }
            }
        }
        self.model.set_ready(true);
        Ok(history)
    }

    pub fn finish(self) -> (Transformer, Adam) {
        (self.model, self.opt)
    }
}

/// One-call form of [`CyclicTrainer`]: returns the trained checkpoint (with
/// optimiser state) and the per-epoch history.
pub fn cyclic_train(model: Transformer, batches: &[Batch], seed: u64) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    let mut t = CyclicTrainer::new(model, None, seed);
    let history = t.run(batches, |_| {})?;
    let (model, opt) = t.finish();
    Ok((Checkpoint::of(&model, Some(&opt)), history))
}

pub const HISTORY_HEADER: &str = "cycle,phase,epoch,loss_pred,loss_recon";

pub fn write_history(mut out: impl Write, history: &[EpochRecord]) -> Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in history {
        let pred = r.loss_pred.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.cycle, r.phase, r.epoch, pred, r.loss_recon)?;
    }
    Ok(())
}

pub fn save_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_history(&mut w, history)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_pairs, batch_sequences, random_experiment, ProgramConfig, SynthConfig};
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            d_ff_head: 16,
            seq_len: 6,
            dropout: 0.1,
            warmup_steps: 10,
            encoder_epochs_per_cycle: 1,
            full_epochs_per_cycle: 2,
            n_cycles: 2,
            ..ModelConfig::default()
        }
    }

    fn batches() -> Vec<Batch> {
        let cfg = SynthConfig { steps: 40, seed: 1, ..SynthConfig::default() };
        let rec = random_experiment(&cfg, &ProgramConfig::default()).unwrap();
        let pairs = build_pairs(&rec, 2, 6, 5).unwrap();
        batch_sequences(&pairs, 2).unwrap()
    }

    #[test]
    fn history_length_and_determinism() {
        let b = batches();
        let (ck1, h1) = cyclic_train(Transformer::new(tiny(), 1).unwrap(), &b, 7).unwrap();
        let (ck2, h2) = cyclic_train(Transformer::new(tiny(), 1).unwrap(), &b, 7).unwrap();
        assert_eq!(h1.len(), tiny().total_epochs());
        assert_eq!(h1, h2);
        assert_eq!(ck1.params.values(), ck2.params.values());
        assert!(ck1.ready);
        assert_eq!(ck1.train_step, (b.len() * tiny().total_epochs()) as u64);
        assert!(h1.iter().all(|r| (r.phase == Phase::Encoder) == r.loss_pred.is_none()));
    }

    #[test]
    fn encoder_phase_leaves_decoder_untouched() {
        let cfg = ModelConfig { full_epochs_per_cycle: 0, n_cycles: 1, ..tiny() };
        let model = Transformer::new(cfg.clone(), 2).unwrap();
        let before = model.params().clone();
        let (ck, _) = cyclic_train(model, &batches(), 3).unwrap();
        for (i, name) in before.names().iter().enumerate() {
            let same = before.value(i) == ck.params.value(ck.params.find(name).unwrap());
            assert_eq!(same, !crate::model::is_encoder_param(name), "{name}");
        }
    }

    #[test]
    fn resume_continues_the_step_counter() {
        let b = batches();
        let cfg = ModelConfig { n_cycles: 1, ..tiny() };
        let (ck, _) = cyclic_train(Transformer::new(cfg, 4).unwrap(), &b, 5).unwrap();
        let first = ck.train_step;
        let (model, opt) = ck.into_model().unwrap();
        let mut t = CyclicTrainer::new(model, opt, 5);
        t.run(&b, |_| {}).unwrap();
        assert_eq!(t.model().train_step(), 2 * first);
    }

    #[test]
    fn nan_loss_reports_divergence() {
        let mut b = batches();
        b[0].chem_target.as_mut_slice()[0] = f64::NAN;
        let err = cyclic_train(Transformer::new(tiny(), 6).unwrap(), &b, 1).unwrap_err();
        match err {
            Error::TrainingDiverged { last_good, .. } => assert!(last_good.is_some()),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_layout() {
        let h = vec![
            EpochRecord { cycle: 0, phase: Phase::Encoder, epoch: 0, loss_pred: None, loss_recon: 0.5 },
            EpochRecord { cycle: 0, phase: Phase::Full, epoch: 0, loss_pred: Some(0.25), loss_recon: 0.125 },
        ];
        let mut buf = Vec::new();
        write_history(&mut buf, &h).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "cycle,phase,epoch,loss_pred,loss_recon\n0,encoder,0,,0.5\n0,full,0,0.25,0.125\n");
    }
}
