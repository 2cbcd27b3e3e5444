//! Autoregressive prediction with sliding motor and chemistry windows.

use crate::error::{Error, Result};
use crate::model::{Mode, Transformer};
use crate::tensor::Mat;

/// Anything that maps a motor window and a chemistry window to the next
/// chemistry frame. The transformer is the real implementation; tests and the
/// GA acceptance checks plug in analytic stand-ins.
pub trait WorldModel: Sync {
    /// Window length the model consumes.
    fn seq_len(&self) -> usize;

    fn is_ready(&self) -> bool {
        true
    }

    /// Next frame for each of `batch` window pairs stacked along rows
    /// (`batch · seq_len x 25` each); returns `batch x 25`.
    fn predict_batch(&self, motors: &Mat, chem: &Mat, batch: usize) -> Result<Mat>;

    fn predict_next(&self, motors: &Mat, chem: &Mat) -> Result<Vec<f64>> {
        Ok(self.predict_batch(motors, chem, 1)?.into_vec())
    }
}

impl WorldModel for Transformer {
    fn seq_len(&self) -> usize {
        self.config().seq_len
    }

    fn is_ready(&self) -> bool {
        Transformer::is_ready(self)
    }

    fn predict_batch(&self, motors: &Mat, chem: &Mat, batch: usize) -> Result<Mat> {
        let out = self.forward_batch(motors, chem, batch, Mode::Eval)?;
        let mut next = Mat::zeros(batch, out.prediction.cols());
        for b in 0..batch {
            next.row_mut(b).copy_from_slice(out.last_prediction(b));
        }
        Ok(next)
    }
}

impl<M: WorldModel + ?Sized> WorldModel for &M {
    fn seq_len(&self) -> usize {
        (**self).seq_len()
    }

    fn is_ready(&self) -> bool {
        (**self).is_ready()
    }

    fn predict_batch(&self, motors: &Mat, chem: &Mat, batch: usize) -> Result<Mat> {
        (**self).predict_batch(motors, chem, batch)
    }
}

/// `horizon` predicted frames. Step `k` feeds motors `k .. k + L` and the
/// latest `L` chemistry frames (the seed, then the model's own output).
pub fn rollout(model: &impl WorldModel, motors: &Mat, chem_seed: &Mat, horizon: usize) -> Result<Mat> {
    let mut out = rollout_batch(model, std::slice::from_ref(motors), std::slice::from_ref(chem_seed), horizon)?;
    Ok(out.pop().expect("one rollout"))
}

/// Several independent rollouts advanced together, one batched model call per step.
pub fn rollout_batch(model: &impl WorldModel, motors: &[Mat], seeds: &[Mat], horizon: usize) -> Result<Vec<Mat>> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("rollout horizon must be at least 1".into()));
    }
    if motors.is_empty() || motors.len() != seeds.len() {
        return Err(Error::InvalidArgument(format!("{} motor programs for {} seeds", motors.len(), seeds.len())));
    }
    if !model.is_ready() {
        return Err(Error::ModelNotReady);
    }
    let l = model.seq_len();
    let n = motors.len();
    let width = seeds[0].cols();
    for (m, s) in motors.iter().zip(seeds) {
        if s.rows() != l || s.cols() != width {
            return Err(Error::Shape(format!("chemistry seed is {:?}, expected ({l}, {width})", s.shape())));
        }
        if m.rows() < l + horizon - 1 {
            return Err(Error::InsufficientData(format!(
                "{} motor frames cannot drive {horizon} steps with windows of {l}",
                m.rows()
            )));
        }
    }
    let mcols = motors[0].cols();
    // chemistry history per rollout: seed followed by predictions
    let mut hist: Vec<Mat> = seeds
        .iter()
        .map(|s| {
            let mut h = Mat::zeros(l + horizon, width);
            h.as_mut_slice()[..l * width].copy_from_slice(s.as_slice());
            h
        })
        .collect();
    let mut mwin = Mat::zeros(n * l, mcols);
    let mut cwin = Mat::zeros(n * l, width);
    for k in 0..horizon {
        for b in 0..n {
            let src = &motors[b].as_slice()[k * mcols..(k + l) * mcols];
            mwin.as_mut_slice()[b * l * mcols..(b + 1) * l * mcols].copy_from_slice(src);
            let src = &hist[b].as_slice()[k * width..(k + l) * width];
            cwin.as_mut_slice()[b * l * width..(b + 1) * l * width].copy_from_slice(src);
        }
        let next = model.predict_batch(&mwin, &cwin, n)?;
        for (b, h) in hist.iter_mut().enumerate() {
            h.row_mut(l + k).copy_from_slice(next.row(b));
        }
    }
    Ok(hist.into_iter().map(|h| h.slice_rows(l, horizon)).collect())
}

/// Repeats one motor frame `rows` times.
pub fn hold_motors(frame: &[f64], rows: usize) -> Mat {
    let mut m = Mat::zeros(rows, frame.len());
    for r in 0..rows {
        m.row_mut(r).copy_from_slice(frame);
    }
    m
}
