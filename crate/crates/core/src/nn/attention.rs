//! Scaled dot-product attention on plain matrices.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Mat;

/// In-place softmax of one score row; `visible[j] == false` entries get zero weight.
///
/// Returns `false` when no entry is visible.
pub(crate) fn softmax_row(row: &mut [f64], visible: impl Fn(usize) -> bool) -> bool {
    let mut max = f64::NEG_INFINITY;
    for (j, &s) in row.iter().enumerate() {
        if visible(j) && s > max {
            max = s;
        }
    }
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut total = 0.0;
    for (j, s) in row.iter_mut().enumerate() {
        *s = if visible(j) { (*s - max).exp() } else { 0.0 };
        total += *s;
    }
    row.iter_mut().for_each(|s| *s /= total);
    true
}

/// Lower-triangular look-ahead mask: query `i` may see keys `0..=i`.
pub fn causal_mask(len: usize) -> Vec<Vec<bool>> {
    (0..len).map(|i| (0..len).map(|j| j <= i).collect()).collect()
}

/// `softmax(Q·Kᵀ / √d_k)·V`, returning the output and the attention weights.
///
/// `mask[i][j] == false` hides key `j` from query `i`.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, mask: Option<&[Vec<bool>]>) -> Result<(Mat, Mat)> {
    if q.cols() != k.cols() {
        return Err(shape_err(format!("query width {} vs key width {}", q.cols(), k.cols())));
    }
    if k.rows() != v.rows() {
        return Err(shape_err(format!("{} keys vs {} values", k.rows(), v.rows())));
    }
    if let Some(m) = mask {
        if m.len() != q.rows() || m.iter().any(|r| r.len() != k.rows()) {
            return Err(shape_err(format!("mask must be {}x{}", q.rows(), k.rows())));
        }
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut weights = Mat::zeros(q.rows(), k.rows());
    crate::tensor::gemm(q.view(), k.view().t(), weights.view_mut(), 0.0);
    weights.scale(scale);
    for i in 0..q.rows() {
        let ok = match mask {
            Some(m) => softmax_row(weights.row_mut(i), |j| m[i][j]),
            None => softmax_row(weights.row_mut(i), |_| true),
        };
        if !ok {
            return Err(Error::Mask(i));
        }
    }
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_attends_fully() {
        let q = Mat::from_vec(1, 2, vec![0.3, -1.0]).unwrap();
        let k = Mat::from_vec(1, 2, vec![2.0, 5.0]).unwrap();
        let v = Mat::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let (out, w) = attention(&q, &k, &v, None).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
        assert_eq!(out, v);
    }

    #[test]
    fn identical_keys_split_evenly() {
        let q = Mat::from_vec(1, 2, vec![0.7, 0.1]).unwrap();
        let k = Mat::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let v = Mat::from_vec(2, 1, vec![0.0, 4.0]).unwrap();
        let (out, w) = attention(&q, &k, &v, None).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
        assert_eq!(out.get(0, 0), 2.0);
    }

    #[test]
    fn log_two_score_gap_gives_two_thirds() {
        // d_k = 1 so the scaled score equals the raw dot product
        let q = Mat::from_vec(1, 1, vec![1.0]).unwrap();
        let k = Mat::from_vec(2, 1, vec![2f64.ln(), 0.0]).unwrap();
        let v = Mat::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let (_, w) = attention(&q, &k, &v, None).unwrap();
        assert!((w.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mask_errors() {
        let m = Mat::zeros(2, 2);
        let blind = vec![vec![true, false], vec![false, false]];
        assert!(matches!(attention(&m, &m, &m, Some(&blind)), Err(Error::Mask(1))));
        let short = vec![vec![true]];
        assert!(matches!(attention(&m, &m, &m, Some(&short)), Err(Error::Shape(_))));
        assert!(matches!(attention(&m, &Mat::zeros(2, 3), &m, None), Err(Error::Shape(_))));
    }

    #[test]
    fn causal_rows_are_normalised() {
        let q = Mat::from_fn(4, 3, |i, j| (i + 2 * j) as f64 * 0.4);
        let (_, w) = attention(&q, &q, &q, Some(&causal_mask(4))).unwrap();
        for i in 0..4 {
            assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.row(i)[i + 1..].iter().all(|&x| x == 0.0));
        }
    }
}
