#![allow(dead_code)]

use surrogate_core::data::Batch;
use surrogate_core::model::{ModelConfig, Transformer};
use surrogate_core::train::{batch_loss, loss_and_grads, Phase};
use surrogate_core::Mat;

/// The tiny configuration the gradient checks run on.
pub fn grad_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        d_ff_head: 16,
        seq_len: 6,
        feat_in: 3,
        feat_out: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

pub fn grad_batch(size: usize, seed: f64) -> Batch {
    let l = 6;
    let motors = Mat::from_fn(size * l, 3, |i, j| ((i * 3 + j) as f64 * 0.713 + seed).sin());
    let chem = Mat::from_fn(size * l + size, 3, |i, j| ((i * 3 + j) as f64 * 0.377 + seed).cos().powi(2));
    let mut chem_in = Mat::zeros(size * l, 3);
    let mut target = Mat::zeros(size * l, 3);
    for b in 0..size {
        for t in 0..l {
            chem_in.row_mut(b * l + t).copy_from_slice(chem.row(b * (l + 1) + t));
            target.row_mut(b * l + t).copy_from_slice(chem.row(b * (l + 1) + t + 1));
        }
    }
    Batch { motors, chem_in, chem_target: target, size, seq_len: l, partial: false }
}

/// Worst relative error between analytic and central-difference gradients,
/// per scalar: `|a − n| / max(|a|, |n|, floor)`.
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_param: String,
    pub failures: usize,
}

pub fn check_gradients(model: &Transformer, batch: &Batch, phase: Phase, h: f64, floor: f64, tol: f64) -> GradReport {
    let (_, grads) = loss_and_grads(model, batch, phase, None).unwrap();
    let mut probe = model.clone();
    let mut rep = GradReport { checked: 0, worst: 0.0, worst_param: String::new(), failures: 0 };
    for (idx, g) in &grads {
        let name = model.params().names()[*idx].clone();
        for k in 0..g.len() {
            let orig = probe.params().value(*idx).as_slice()[k];
            probe.params_mut().value_mut(*idx).as_mut_slice()[k] = orig + h;
            let up = batch_loss(&probe, batch, phase).unwrap().total;
            probe.params_mut().value_mut(*idx).as_mut_slice()[k] = orig - h;
            let down = batch_loss(&probe, batch, phase).unwrap().total;
            probe.params_mut().value_mut(*idx).as_mut_slice()[k] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = g.as_slice()[k];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(floor);
            rep.checked += 1;
            if rel >= tol {
                rep.failures += 1;
            }
            if rel > rep.worst {
                rep.worst = rel;
                rep.worst_param = format!("{name}[{k}]");
            }
        }
    }
    rep
}
