//! Phase-tolerant comparison of predicted and recorded chemistry.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::ExperimentRecord;
use crate::error::{Error, Result};
use crate::rollout::{rollout_batch, WorldModel};
use crate::tensor::Mat;

/// `error_i = min_{|o| ≤ w} mean_c |pred[i + o, c] − truth[i, c]|` (offsets
/// clipped to the series), averaged over `i`.
///
/// The result is a per-cell error: the mean absolute deviation of one cell.
pub fn evaluate_phase_window(pred: &Mat, truth: &Mat, w: usize) -> Result<f64> {
    Ok(phase_window_errors(pred, truth, w)?.iter().sum::<f64>() / truth.rows() as f64)
}

/// The per-timestep errors behind [`evaluate_phase_window`].
pub fn phase_window_errors(pred: &Mat, truth: &Mat, w: usize) -> Result<Vec<f64>> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    let t = truth.rows();
    if t == 0 || truth.cols() == 0 {
        return Err(Error::EmptyInput("nothing to evaluate".into()));
    }
    if w >= t {
        return Err(Error::InvalidArgument(format!("phase window {w} must be shorter than the series ({t})")));
    }
    let cols = truth.cols() as f64;
    Ok((0..t)
        .map(|i| {
            let lo = i.saturating_sub(w);
            let hi = (i + w).min(t - 1);
            (lo..=hi)
                .map(|j| pred.row(j).iter().zip(truth.row(i)).map(|(p, q)| (p - q).abs()).sum::<f64>() / cols)
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// A held-out segment: the chemistry seed, the motors that drive the rollout
/// and the chemistry that actually followed.
#[derive(Clone, Debug)]
pub struct EvalWindow {
    pub seed: Mat,
    pub motors: Mat,
    pub truth: Mat,
}

/// Cuts `count` evenly spaced segments of `seq_len + horizon` frames from a record.
pub fn eval_windows(record: &ExperimentRecord, seq_len: usize, horizon: usize, count: usize) -> Result<Vec<EvalWindow>> {
    if count < 1 || horizon < 1 {
        return Err(Error::InvalidArgument("need at least one window of at least one step".into()));
    }
    let span = seq_len + horizon;
    if record.len() < span {
        return Err(Error::InsufficientData(format!("record of {} frames, segments need {span}", record.len())));
    }
    let motors = record.motor_matrix();
    let chem = record.chem_matrix();
    let room = record.len() - span;
    Ok((0..count)
        .map(|i| {
            let s = if count == 1 { 0 } else { room * i / (count - 1) };
            EvalWindow {
                seed: chem.slice_rows(s, seq_len),
                motors: motors.slice_rows(s, span - 1),
                truth: chem.slice_rows(s + seq_len, horizon),
            }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct RolloutReport {
    pub windows: usize,
    pub horizon: usize,
    pub phase_window: usize,
    /// Mean phase-window error of the model's rollouts.
    pub model_error: f64,
    /// The same error for a predictor that always outputs zeros.
    pub zero_error: f64,
    /// Mean error per cell index over all windows, without phase tolerance.
    pub per_cell: Vec<f64>,
}

impl RolloutReport {
    pub fn ratio_to_zero(&self) -> f64 {
        self.model_error / self.zero_error
    }
}

/// Rolls the model out over every window and scores it against the truth.
pub fn evaluate_rollouts(model: &impl WorldModel, windows: &[EvalWindow], w: usize) -> Result<RolloutReport> {
    let first = windows.first().ok_or_else(|| Error::EmptyInput("no evaluation windows".into()))?;
    let horizon = first.truth.rows();
    let motors: Vec<Mat> = windows.iter().map(|x| x.motors.clone()).collect();
    let seeds: Vec<Mat> = windows.iter().map(|x| x.seed.clone()).collect();
    let preds = rollout_batch(model, &motors, &seeds, horizon)?;
    let cells = first.truth.cols();
    let mut model_error = 0.0;
    let mut zero_error = 0.0;
    let mut per_cell = vec![0.0; cells];
    for (p, win) in preds.iter().zip(windows) {
        model_error += evaluate_phase_window(p, &win.truth, w)?;
        zero_error += evaluate_phase_window(&Mat::zeros(horizon, cells), &win.truth, w)?;
        for (c, acc) in per_cell.iter_mut().enumerate() {
            *acc += (0..horizon).map(|t| (p.get(t, c) - win.truth.get(t, c)).abs()).sum::<f64>() / horizon as f64;
        }
    }
    let n = windows.len() as f64;
    per_cell.iter_mut().for_each(|v| *v /= n);
    Ok(RolloutReport {
        windows: windows.len(),
        horizon,
        phase_window: w,
        model_error: model_error / n,
        zero_error: zero_error / n,
        per_cell,
    })
}

/// Reassigns motor programs among windows by a random derangement, keeping
/// seeds and truths in place. Used to check that predictions depend on the motors.
pub fn shuffle_motors(windows: &[EvalWindow], seed: u64) -> Result<Vec<EvalWindow>> {
    if windows.len() < 2 {
        return Err(Error::InsufficientData("shuffling motors needs at least two windows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = windows.len();
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    Ok(windows
        .iter()
        .zip(&perm)
        .map(|(w, &p)| EvalWindow { seed: w.seed.clone(), motors: windows[p].motors.clone(), truth: w.truth.clone() })
        .collect())
}
