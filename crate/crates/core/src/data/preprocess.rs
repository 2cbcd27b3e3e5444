//! Recording clean-up: frame decimation, blue-channel centring and
//! normalisation, cell binarisation and motor speed scaling.

use crate::data::frames::{BinaryChemFrame, ChemFrame, ExperimentRecord, Frame, MotorFrame, CELLS};
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Default trailing moving-average width, in sampled frames.
pub const DEFAULT_MA_WINDOW: usize = 60;

/// Keeps every `factor`-th frame and renumbers the survivors from zero.
pub fn decimate_frames(record: &ExperimentRecord, factor: usize) -> Result<ExperimentRecord> {
    if factor < 1 {
        return Err(Error::InvalidArgument("decimation factor must be at least 1".into()));
    }
    if record.is_empty() {
        return Err(Error::EmptyInput("cannot decimate an empty record".into()));
    }
    let frames = record
        .frames()
        .iter()
        .step_by(factor)
        .enumerate()
        .map(|(t, f)| Frame { t, motors: f.motors, chem: f.chem })
        .collect();
    ExperimentRecord::new(frames)
}

/// Turns per-frame per-cell blue means (`T x 25`) into a centred signal in `[0, 1]`.
///
/// Each cell has a trailing moving average of width `window` subtracted (the
/// average is taken over however many frames exist at the start of the
/// series), then the centred series is min-max scaled. A cell whose centred
/// series is constant maps to all zeros.
pub fn blue_channel_signal(raw: &Mat, window: usize) -> Result<Mat> {
    if window < 1 {
        return Err(Error::InvalidArgument("moving-average window must be at least 1".into()));
    }
    if raw.rows() < 1 {
        return Err(Error::EmptyInput("blue-channel series is empty".into()));
    }
    if !raw.is_finite() {
        return Err(Error::InvalidData("blue-channel series contains non-finite values".into()));
    }
    let (t_len, cells) = raw.shape();
    let mut out = Mat::zeros(t_len, cells);
    let mut centred = vec![0.0; t_len];
    for c in 0..cells {
        let mut running = 0.0;
        for t in 0..t_len {
            running += raw.get(t, c);
            if t >= window {
                running -= raw.get(t - window, c);
            }
            let n = (t + 1).min(window) as f64;
            centred[t] = raw.get(t, c) - running / n;
        }
        let lo = centred.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = centred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        // a constant cell leaves only round-off after centring
        let scale = centred.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if span > 1e-12 * scale {
            for (t, v) in centred.iter().enumerate() {
                out.set(t, c, ((v - lo) / span).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Decides per cell whether an oscillation is visible.
pub trait CellClassifier {
    fn classify(&self, chem: &ChemFrame) -> BinaryChemFrame;
}

/// Fixed threshold on the normalised blue signal.
#[derive(Clone, Copy, Debug)]
pub struct ThresholdClassifier {
    pub theta: f64,
}

impl ThresholdClassifier {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidArgument(format!("threshold {theta} must lie in (0, 1)")));
        }
        Ok(Self { theta })
    }
}

impl Default for ThresholdClassifier {
    fn default() -> Self {
        Self { theta: 0.5 }
    }
}

impl CellClassifier for ThresholdClassifier {
    fn classify(&self, chem: &ChemFrame) -> BinaryChemFrame {
        let mut bits = [0u8; CELLS];
        for (b, &v) in bits.iter_mut().zip(chem.values()) {
            *b = u8::from(v >= self.theta);
        }
        BinaryChemFrame::new(&bits).expect("threshold bits are 0 or 1")
    }
}

pub fn binarize_cells(chem: &ChemFrame, theta: f64) -> Result<BinaryChemFrame> {
    Ok(ThresholdClassifier::new(theta)?.classify(chem))
}

/// Scales raw motor readings by the maximum speed so that `±max_raw` maps to `±1`.
pub fn normalize_motors(raw: &[f64], max_raw: f64) -> Result<MotorFrame> {
    if !(max_raw > 0.0) || !max_raw.is_finite() {
        return Err(Error::InvalidArgument(format!("max speed {max_raw} must be positive")));
    }
    if raw.len() != CELLS {
        return Err(Error::InvalidData(format!("expected {CELLS} motor readings, got {}", raw.len())));
    }
    if let Some((i, v)) = raw.iter().enumerate().find(|(_, v)| !(v.abs() <= max_raw)) {
        return Err(Error::OutOfRange(format!("motor {i} reading {v} exceeds ±{max_raw}")));
    }
    let scaled: Vec<f64> = raw.iter().map(|v| v / max_raw).collect();
    MotorFrame::new(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(n: usize) -> ExperimentRecord {
        let motors = (0..n).map(|i| MotorFrame::uniform((i % 3) as f64 * 0.5 - 0.5).unwrap()).collect();
        let chem = (0..n).map(|i| ChemFrame::new(&[(i % 7) as f64 / 7.0; CELLS]).unwrap()).collect();
        ExperimentRecord::from_parts(motors, chem).unwrap()
    }

    #[test]
    fn decimation_counts_and_indices() {
        let r = record(10);
        let d = decimate_frames(&r, 5).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.frames()[1].chem, r.frames()[5].chem);
        assert_eq!(d.frames()[1].t, 1);
        assert_eq!(decimate_frames(&r, 1).unwrap(), r);
        assert_eq!(decimate_frames(&record(36000), 5).unwrap().len(), 7200);
        assert!(matches!(decimate_frames(&r, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(decimate_frames(&ExperimentRecord::default(), 5), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn constant_cells_map_to_zero() {
        let raw = Mat::filled(20, CELLS, 0.7);
        assert!(blue_channel_signal(&raw, 5).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_keeps_its_position() {
        let raw = Mat::from_vec(5, 1, vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let out = blue_channel_signal(&raw, 5).unwrap();
        let argmax = (0..5).max_by(|&a, &b| out.get(a, 0).total_cmp(&out.get(b, 0))).unwrap();
        assert_eq!(argmax, 2);
        assert_eq!(out.get(2, 0), 1.0);
    }

    #[test]
    fn drift_is_removed() {
        // sinusoid of period 20 with and without a strong linear drift; window 200
        let n = 2000;
        let period = 20.0;
        let osc = |t: usize| (2.0 * std::f64::consts::PI * t as f64 / period).sin();
        let clean = Mat::from_fn(n, 1, |t, _| osc(t));
        let drifted = Mat::from_fn(n, 1, |t, _| osc(t) + 0.002 * t as f64);
        let amp = |m: &Mat| {
            // amplitude over the settled second half
            let tail: Vec<f64> = (n / 2..n).map(|t| m.get(t, 0)).collect();
            let hi = tail.iter().copied().fold(f64::MIN, f64::max);
            let lo = tail.iter().copied().fold(f64::MAX, f64::min);
            hi - lo
        };
        let a_clean = amp(&blue_channel_signal(&clean, 200).unwrap());
        let a_drift = amp(&blue_channel_signal(&drifted, 200).unwrap());
        assert!((a_drift - a_clean).abs() <= 0.1 * a_clean, "{a_drift} vs {a_clean}");
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut raw = Mat::zeros(3, 2);
        raw.set(1, 1, f64::NAN);
        assert!(matches!(blue_channel_signal(&raw, 2), Err(Error::InvalidData(_))));
    }

    #[test]
    fn threshold_binarisation() {
        let zeros = ChemFrame::ZERO;
        assert!(binarize_cells(&zeros, 0.5).unwrap().bits().iter().all(|&b| b == 0));
        let ones = ChemFrame::new(&[1.0; CELLS]).unwrap();
        assert!(binarize_cells(&ones, 0.5).unwrap().bits().iter().all(|&b| b == 1));
        let alt: Vec<f64> = (0..CELLS).map(|i| if i % 2 == 0 { 0.4 } else { 0.6 }).collect();
        let bits = binarize_cells(&ChemFrame::new(&alt).unwrap(), 0.5).unwrap();
        for (i, &b) in bits.bits().iter().enumerate() {
            assert_eq!(b, (i % 2) as u8);
        }
        assert!(binarize_cells(&zeros, 1.0).is_err());
    }

    #[test]
    fn motor_scaling() {
        let mut raw = [0.0; CELLS];
        raw[0] = -200.0;
        raw[1] = 100.0;
        let f = normalize_motors(&raw, 200.0).unwrap();
        assert_eq!(f.speeds()[0], -1.0);
        assert_eq!(f.speeds()[1], 0.5);
        assert_eq!(f.speeds()[2], 0.0);
        raw[3] = 201.0;
        assert!(matches!(normalize_motors(&raw, 200.0), Err(Error::OutOfRange(_))));
    }
}
