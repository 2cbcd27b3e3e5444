use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Sinusoidal position code: `sin(pos / 10000^(2i/d))` in even columns and
/// the matching cosine in odd columns.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Result<Mat> {
    if d_model % 2 != 0 {
        return Err(Error::InvalidArgument(format!("d_model {d_model} must be even")));
    }
    Ok(Mat::from_fn(seq_len, d_model, |pos, col| {
        let i = (col / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d_model as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}
