use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::tensor::Mat;

/// Inverse-square-root schedule with linear warm-up:
/// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn lr_schedule(step: u64, d_model: usize, warmup: u64) -> Result<f64> {
    if step < 1 {
        return Err(Error::InvalidArgument("learning-rate step counts from 1".into()));
    }
    if warmup < 1 {
        return Err(Error::InvalidArgument("warm-up must be at least one step".into()));
    }
    Ok((d_model as f64).powf(-0.5) * decay_branch(step).min(ramp_branch(step, warmup)))
}

/// `step^-0.5`
pub fn decay_branch(step: u64) -> f64 {
    (step as f64).powf(-0.5)
}

/// `step · warmup^-1.5`, written as `step^-0.5 · (step / warmup)^1.5` so that it
/// meets [`decay_branch`] exactly at `step == warmup`.
pub fn ramp_branch(step: u64, warmup: u64) -> f64 {
    let s = step as f64;
    s.powf(-0.5) * (s / warmup as f64).powf(1.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// The transformer settings: β1 = 0.9, β2 = 0.98, ε = 1e-9.
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// Adam with one moment pair per parameter tensor and per-tensor step counts,
/// so that tensors frozen for part of training get correct bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub t: Vec<u64>,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let zeros = || params.values().iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect::<Vec<_>>();
        Self { cfg, m: zeros(), v: zeros(), t: vec![0; params.len()] }
    }

    /// Applies one update for the given gradients; parameters without a
    /// gradient are untouched. Updated values are rounded to `f32` precision
    /// so that checkpoints store them exactly.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[(usize, Mat)], lr: f64) {
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        for (idx, g) in grads {
            let idx = *idx;
            self.t[idx] += 1;
            let t = self.t[idx] as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let p = params.value_mut(idx).as_mut_slice();
            let m = self.m[idx].as_mut_slice();
            let v = self.v[idx].as_mut_slice();
            for i in 0..p.len() {
                let gi = g.as_slice()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] = round_f32(p[i] - lr * mh / (vh.sqrt() + eps));
            }
        }
    }
}

#[inline]
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}
