use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Side length of the stirred cell array.
pub const GRID: usize = 5;
/// Cells per frame.
pub const CELLS: usize = GRID * GRID;
/// Row-major index of the centre cell.
pub const CENTRE: usize = CELLS / 2;

fn check_len(values: &[f64], what: &str) -> Result<()> {
    if values.len() != CELLS {
        return Err(Error::InvalidData(format!("{what} needs {CELLS} values, got {}", values.len())));
    }
    Ok(())
}

/// Motor speeds for one grid snapshot, row-major, each in `[-1, 1]`.
/// Positive is clockwise, negative counter-clockwise, zero disabled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MotorFrame([f64; CELLS]);

impl MotorFrame {
    pub const OFF: MotorFrame = MotorFrame([0.0; CELLS]);

    pub fn new(speeds: &[f64]) -> Result<Self> {
        check_len(speeds, "motor frame")?;
        if let Some((i, v)) = speeds.iter().enumerate().find(|(_, v)| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("motor {i} speed {v} outside [-1, 1]")));
        }
        let mut out = [0.0; CELLS];
        out.copy_from_slice(speeds);
        Ok(Self(out))
    }

    /// Clamps every speed into range; non-finite values become 0.
    pub fn clamped(speeds: &[f64]) -> Result<Self> {
        check_len(speeds, "motor frame")?;
        let mut out = [0.0; CELLS];
        for (o, &v) in out.iter_mut().zip(speeds) {
            *o = if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
        }
        Ok(Self(out))
    }

    pub fn uniform(speed: f64) -> Result<Self> {
        Self::new(&[speed; CELLS])
    }

    pub fn speeds(&self) -> &[f64; CELLS] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for MotorFrame {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<MotorFrame> for Vec<f64> {
    fn from(f: MotorFrame) -> Self {
        f.0.to_vec()
    }
}

/// Normalised oscillation signal per cell, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ChemFrame([f64; CELLS]);

impl ChemFrame {
    pub const ZERO: ChemFrame = ChemFrame([0.0; CELLS]);

    pub fn new(values: &[f64]) -> Result<Self> {
        check_len(values, "chemistry frame")?;
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("cell {i} value {v} outside [0, 1]")));
        }
        let mut out = [0.0; CELLS];
        out.copy_from_slice(values);
        Ok(Self(out))
    }

    /// Clamps model output into the frame range (a relu head can overshoot 1).
    pub fn clamped(values: &[f64]) -> Result<Self> {
        check_len(values, "chemistry frame")?;
        let mut out = [0.0; CELLS];
        for (o, &v) in out.iter_mut().zip(values) {
            *o = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Ok(Self(out))
    }

    pub fn values(&self) -> &[f64; CELLS] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ChemFrame {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<ChemFrame> for Vec<f64> {
    fn from(f: ChemFrame) -> Self {
        f.0.to_vec()
    }
}

/// Per-cell oscillation flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinaryChemFrame([u8; CELLS]);

impl BinaryChemFrame {
    pub fn new(bits: &[u8]) -> Result<Self> {
        if bits.len() != CELLS {
            return Err(Error::InvalidData(format!("binary frame needs {CELLS} bits, got {}", bits.len())));
        }
        if let Some(b) = bits.iter().find(|b| **b > 1) {
            return Err(Error::InvalidData(format!("bit value {b} is not 0 or 1")));
        }
        let mut out = [0; CELLS];
        out.copy_from_slice(bits);
        Ok(Self(out))
    }

    pub fn bits(&self) -> &[u8; CELLS] {
        &self.0
    }

    /// The bits as a `{0.0, 1.0}` chemistry frame, for the sigmoid-head dataset variant.
    pub fn to_chem(&self) -> ChemFrame {
        let mut out = [0.0; CELLS];
        for (o, &b) in out.iter_mut().zip(&self.0) {
            *o = f64::from(b);
        }
        ChemFrame(out)
    }
}

/// One recorded time step: the actuation and the chemistry observed with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub motors: MotorFrame,
    pub chem: ChemFrame,
}

/// An aligned motor/chemistry recording.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentRecord {
    frames: Vec<Frame>,
}

impl ExperimentRecord {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        for (i, f) in frames.iter().enumerate() {
            if i == 0 && f.t != 0 {
                return Err(Error::InvalidData(format!("first time index is {}, expected 0", f.t)));
            }
            if i > 0 && f.t <= frames[i - 1].t {
                return Err(Error::InvalidData(format!(
                    "time index {} at frame {i} does not increase",
                    f.t
                )));
            }
        }
        Ok(Self { frames })
    }

    /// Builds a record from aligned sequences, numbering frames `0, 1, 2, ...`.
    pub fn from_parts(motors: Vec<MotorFrame>, chem: Vec<ChemFrame>) -> Result<Self> {
        if motors.len() != chem.len() {
            return Err(Error::InvalidData(format!(
                "{} motor frames vs {} chemistry frames",
                motors.len(),
                chem.len()
            )));
        }
        let frames = motors
            .into_iter()
            .zip(chem)
            .enumerate()
            .map(|(t, (motors, chem))| Frame { t, motors, chem })
            .collect();
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn motors(&self) -> impl Iterator<Item = &MotorFrame> {
        self.frames.iter().map(|f| &f.motors)
    }

    pub fn chem(&self) -> impl Iterator<Item = &ChemFrame> {
        self.frames.iter().map(|f| &f.chem)
    }

    /// Motor speeds as a `T x 25` matrix.
    pub fn motor_matrix(&self) -> Mat {
        Mat::from_fn(self.len(), CELLS, |t, c| self.frames[t].motors.speeds()[c])
    }

    /// Chemistry values as a `T x 25` matrix.
    pub fn chem_matrix(&self) -> Mat {
        Mat::from_fn(self.len(), CELLS, |t, c| self.frames[t].chem.values()[c])
    }
}
