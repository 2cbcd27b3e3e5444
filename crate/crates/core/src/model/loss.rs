use crate::error::{shape_err, Error, Result};
use crate::tensor::Mat;

/// Per-timestep MSE divided by `max(max(y_true[t]), eps)`, averaged over time.
///
/// Quiet stretches of an oscillator are all zeros; the scaling makes the few
/// frames that contain a pulse dominate the loss.
pub fn scaled_mse(y_true: &Mat, y_pred: &Mat, eps: f64) -> Result<f64> {
    check(y_true, y_pred)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let cols = y_true.cols() as f64;
    let total: f64 = y_true
        .row_iter()
        .zip(y_pred.row_iter())
        .map(|(t, p)| {
            let mse = t.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / cols;
            let denom = t.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(eps);
            mse / denom
        })
        .sum();
    Ok(total / y_true.rows() as f64)
}

pub fn mse(y_true: &Mat, y_pred: &Mat) -> Result<f64> {
    check(y_true, y_pred)?;
    Ok(y_true.as_slice().iter().zip(y_pred.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        / y_true.len() as f64)
}

fn check(a: &Mat, b: &Mat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("loss over an empty sequence".into()));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidData("loss inputs contain NaN or infinity".into()));
    }
    Ok(())
}
