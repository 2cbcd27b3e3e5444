//! Sliding windows over a recording and their grouping into training batches.

use crate::data::frames::{ExperimentRecord, CELLS};
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Index windows `[k, k + every, ..., k + every·(seq_len − 1)]` for
/// `k = 0, stride, 2·stride, ...` that fit inside a series of `series_len`.
pub fn make_sequences(series_len: usize, every: usize, seq_len: usize, stride: usize) -> Result<Vec<Vec<usize>>> {
    if every < 1 || seq_len < 1 || stride < 1 {
        return Err(Error::InvalidArgument("sampling, length and stride must all be at least 1".into()));
    }
    let span = every * (seq_len - 1);
    if series_len < span + 1 {
        return Err(Error::InsufficientData(format!(
            "series of {series_len} frames is shorter than one window spanning {} frames",
            span + 1
        )));
    }
    let last_start = series_len - 1 - span;
    Ok((0..=last_start)
        .step_by(stride)
        .map(|k| (0..seq_len).map(|j| k + every * j).collect())
        .collect())
}

/// Closed-form number of windows produced by [`make_sequences`].
pub fn window_count(series_len: usize, every: usize, seq_len: usize, stride: usize) -> usize {
    let span = every * (seq_len - 1);
    if series_len < span + 1 {
        0
    } else {
        (series_len - 1 - span) / stride + 1
    }
}

/// One teacher-forcing training example.
#[derive(Clone, Debug, PartialEq)]
pub struct SequencePair {
    pub motors: Mat,
    pub chem_in: Mat,
    /// `chem_in` one sampled step ahead.
    pub chem_target: Mat,
}

impl SequencePair {
    pub fn seq_len(&self) -> usize {
        self.motors.rows()
    }
}

/// Cuts a record into aligned windows.
///
/// Windows are laid over the first `len − every` frames so that every input
/// position has a target one sampled step later.
pub fn build_pairs(record: &ExperimentRecord, every: usize, seq_len: usize, stride: usize) -> Result<Vec<SequencePair>> {
    if every < 1 {
        return Err(Error::InvalidArgument("sampling interval must be at least 1".into()));
    }
    let usable = record.len().saturating_sub(every);
    let windows = make_sequences(usable, every, seq_len, stride)?;
    let frames = record.frames();
    let gather = |idx: &[usize], shift: usize, motors: bool| {
        let mut m = Mat::zeros(idx.len(), CELLS);
        for (r, &i) in idx.iter().enumerate() {
            let f = &frames[i + shift];
            let src: &[f64] = if motors { f.motors.speeds() } else { f.chem.values() };
            m.row_mut(r).copy_from_slice(src);
        }
        m
    };
    Ok(windows
        .iter()
        .map(|w| SequencePair {
            motors: gather(w, 0, true),
            chem_in: gather(w, 0, false),
            chem_target: gather(w, every, false),
        })
        .collect())
}

/// Sequences stacked along rows: `motors` etc. are `(size · seq_len) x 25`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub motors: Mat,
    pub chem_in: Mat,
    pub chem_target: Mat,
    pub size: usize,
    pub seq_len: usize,
    /// Set on a trailing batch with fewer than the requested number of sequences.
    pub partial: bool,
}

impl Batch {
    /// `(batch, seq_len, features)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.size, self.seq_len, self.motors.cols())
    }

    pub fn from_pairs(pairs: &[SequencePair], partial: bool) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::EmptyInput("batch needs at least one pair".into()))?;
        let seq_len = first.seq_len();
        if pairs.iter().any(|p| p.seq_len() != seq_len) {
            return Err(Error::Shape("sequence lengths differ within a batch".into()));
        }
        let stack = |f: fn(&SequencePair) -> &Mat| Mat::vstack(&pairs.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            motors: stack(|p| &p.motors)?,
            chem_in: stack(|p| &p.chem_in)?,
            chem_target: stack(|p| &p.chem_target)?,
            size: pairs.len(),
            seq_len,
            partial,
        })
    }

    /// Sequence `i` of the batch.
    pub fn pair(&self, i: usize) -> SequencePair {
        let l = self.seq_len;
        SequencePair {
            motors: self.motors.slice_rows(i * l, l),
            chem_in: self.chem_in.slice_rows(i * l, l),
            chem_target: self.chem_target.slice_rows(i * l, l),
        }
    }
}

/// Groups pairs, in order, into batches of `batch_size`; the last one may be smaller.
pub fn batch_sequences(pairs: &[SequencePair], batch_size: usize) -> Result<Vec<Batch>> {
    if batch_size < 1 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no sequence pairs to batch".into()));
    }
    pairs
        .chunks(batch_size)
        .map(|chunk| Batch::from_pairs(chunk, chunk.len() < batch_size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::frames::{ChemFrame, MotorFrame};
    use proptest::prelude::*;

    /// Every `(start, every, len)` window that fits, found by scanning all starts.
    fn enumerate_windows(series_len: usize, every: usize, seq_len: usize, stride: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut k = 0;
        while k < series_len {
            let w: Vec<usize> = (0..seq_len).map(|j| k + every * j).collect();
            if w.iter().all(|&i| i < series_len) {
                out.push(w);
            }
            k += stride;
        }
        out
    }

    #[test]
    fn small_windows_match_enumeration() {
        let w = make_sequences(6, 2, 3, 1).unwrap();
        assert_eq!(w, vec![vec![0, 2, 4], vec![1, 3, 5]]);
        assert_eq!(w, enumerate_windows(6, 2, 3, 1));
        assert_eq!(make_sequences(9, 1, 9, 1).unwrap(), vec![(0..9).collect::<Vec<_>>()]);
    }

    #[test]
    fn full_scale_window_count() {
        assert_eq!(window_count(7200, 8, 150, 1), 6008);
        assert_eq!(enumerate_windows(7200, 8, 150, 1).len(), 6008);
        assert_eq!(make_sequences(7200, 8, 150, 1).unwrap().len(), 6008);
    }

    #[test]
    fn too_short_series() {
        assert!(matches!(make_sequences(10, 8, 3, 1), Err(Error::InsufficientData(_))));
    }

    fn dummy_pair(tag: f64, len: usize) -> SequencePair {
        let m = Mat::filled(len, CELLS, tag);
        SequencePair { motors: m.clone(), chem_in: m.clone(), chem_target: m }
    }

    #[test]
    fn batching_full_scale() {
        let pairs: Vec<_> = (0..6008).map(|i| dummy_pair(i as f64, 2)).collect();
        let batches = batch_sequences(&pairs, 64).unwrap();
        assert_eq!(batches.len(), 94);
        assert_eq!(batches.iter().filter(|b| !b.partial).count(), 93);
        assert_eq!(batches[93].size, 56);
        assert!(batches[93].partial);
        assert_eq!(batches[5].pair(3).motors.get(0, 0), (5 * 64 + 3) as f64);
    }

    #[test]
    fn full_and_single_batches() {
        let pairs: Vec<_> = (0..64).map(|i| dummy_pair(i as f64, 150)).collect();
        let b = batch_sequences(&pairs, 64).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].shape(), (64, 150, 25));
        assert!(!b[0].partial);
        let one = batch_sequences(&pairs[..1], 64).unwrap();
        assert_eq!(one[0].size, 1);
        assert!(one[0].partial);
        assert!(matches!(batch_sequences(&[], 64), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn pairs_are_teacher_forcing_aligned() {
        let n = 40;
        let motors = (0..n).map(|i| MotorFrame::uniform(i as f64 / n as f64).unwrap()).collect();
        let chem = (0..n).map(|i| ChemFrame::new(&[i as f64 / n as f64; CELLS]).unwrap()).collect();
        let rec = ExperimentRecord::from_parts(motors, chem).unwrap();
        let pairs = build_pairs(&rec, 3, 5, 2).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            for t in 0..p.seq_len() - 1 {
                assert_eq!(p.chem_target.row(t), p.chem_in.row(t + 1));
            }
            // motors and chemistry come from the same frame
            assert_eq!(p.motors.get(0, 0), p.chem_in.get(0, 0));
        }
        let last = pairs.last().unwrap();
        assert!(last.chem_target.get(4, 0) <= (n - 1) as f64 / n as f64);
    }

    proptest! {
        #[test]
        fn window_count_matches_closed_form(len in 1usize..400, every in 1usize..9, seq in 1usize..30, stride in 1usize..7) {
            let expected = window_count(len, every, seq, stride);
            match make_sequences(len, every, seq, stride) {
                Ok(w) => {
                    prop_assert_eq!(w.len(), expected);
                    prop_assert!(w.iter().flatten().all(|&i| i < len));
                    for win in &w {
                        prop_assert_eq!(win.len(), seq);
                        prop_assert!(win.windows(2).all(|p| p[1] - p[0] == every));
                    }
                }
                Err(_) => prop_assert_eq!(expected, 0),
            }
        }
    }
}
