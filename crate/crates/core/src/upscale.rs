//! Stride-1 tiling of the 5x5 model over an NxN field: every cell's next
//! value is the centre prediction for the 5x5 patch around it.

use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use crate::data::{CELLS, CENTRE, GRID};
use crate::error::{Error, Result};
use crate::rollout::WorldModel;
use crate::tensor::Mat;
use crate::tensorfile::{self, Tensor};

/// Zero padding on each side so that every cell has a full patch.
pub const PAD: usize = GRID / 2;

/// Patches per model call.
const CHUNK: usize = 64;

/// A sequence of NxN frames; row `t` holds frame `t` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    n: usize,
    frames: Mat,
}

impl Field {
    pub fn new(n: usize, frames: Mat) -> Result<Self> {
        if n == 0 || frames.cols() != n * n {
            return Err(Error::Shape(format!("{} values per frame is not a {n}x{n} grid", frames.cols())));
        }
        Ok(Self { n, frames })
    }

    pub fn zeros(len: usize, n: usize) -> Self {
        Self { n, frames: Mat::zeros(len, n * n) }
    }

    pub fn filled(len: usize, n: usize, value: f64) -> Self {
        Self { n, frames: Mat::filled(len, n * n, value) }
    }

    pub fn from_fn(len: usize, n: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        Self { n, frames: Mat::from_fn(len, n * n, |t, k| f(t, k / n, k % n)) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn frames(&self) -> &Mat {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn get(&self, t: usize, r: usize, c: usize) -> f64 {
        self.frames.get(t, r * self.n + c)
    }

    /// Quarter turn anticlockwise of every frame.
    pub fn rotate90(&self) -> Self {
        let n = self.n;
        Self::from_fn(self.len(), n, |t, r, c| self.get(t, c, n - 1 - r))
    }

    /// Drops the oldest frame and appends `frame`.
    pub fn push(&mut self, frame: &[f64]) {
        let w = self.frames.cols();
        let s = self.frames.as_mut_slice();
        s.copy_within(w.., 0);
        let len = s.len();
        s[len - w..].copy_from_slice(frame);
    }

    /// The `GRID x GRID` patch with top-left corner `(r, c)` as a `len x 25` window.
    pub fn patch(&self, r: usize, c: usize) -> Mat {
        Mat::from_fn(self.len(), CELLS, |t, k| self.get(t, r + k / GRID, c + k % GRID))
    }
}

/// Zero border of width `pad` around every frame.
pub fn pad_grid(field: &Field, pad: usize) -> Field {
    let n = field.n + 2 * pad;
    Field::from_fn(field.len(), n, |t, r, c| {
        let inside = (pad..pad + field.n).contains(&r) && (pad..pad + field.n).contains(&c);
        if inside {
            field.get(t, r - pad, c - pad)
        } else {
            0.0
        }
    })
}

/// Motor and chemistry windows over the whole field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    pub motors: Field,
    pub chem: Field,
}

impl FieldState {
    pub fn new(motors: Field, chem: Field) -> Result<Self> {
        if motors.n != chem.n || motors.len() != chem.len() || motors.is_empty() {
            return Err(Error::Shape(format!(
                "motor field {}x{}x{} vs chemistry field {}x{}x{}",
                motors.len(),
                motors.n,
                motors.n,
                chem.len(),
                chem.n,
                chem.n
            )));
        }
        if motors.n < GRID {
            return Err(Error::InvalidArgument(format!("field side {} is below the {GRID}x{GRID} kernel", motors.n)));
        }
        check_motors(&motors)?;
        if chem.frames.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange("chemistry field outside [0, 1]".into()));
        }
        Ok(Self { motors, chem })
    }

    pub fn n(&self) -> usize {
        self.motors.n
    }

    pub fn seq_len(&self) -> usize {
        self.motors.len()
    }
}

fn check_motors(f: &Field) -> Result<()> {
    if f.frames.as_slice().iter().any(|v| !(v.abs() <= 1.0)) {
        return Err(Error::OutOfRange("motor field outside [-1, 1]".into()));
    }
    Ok(())
}

/// Next NxN chemistry frame: one centre prediction per cell, from the padded
/// patch pair centred on it. Patches are evaluated in parallel chunks and
/// assembled in row-major order.
pub fn upscale_step(state: &FieldState, model: &impl WorldModel) -> Result<Vec<f64>> {
    if !model.is_ready() {
        return Err(Error::ModelNotReady);
    }
    if state.seq_len() != model.seq_len() {
        return Err(Error::Shape(format!("field windows of {} frames, model expects {}", state.seq_len(), model.seq_len())));
    }
    let n = state.n();
    let motors = pad_grid(&state.motors, PAD);
    let chem = pad_grid(&state.chem, PAD);
    let positions: Vec<(usize, usize)> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).collect();
    let chunks: Vec<Vec<f64>> = positions
        .par_chunks(CHUNK)
        .map(|chunk| {
            let m: Vec<Mat> = chunk.iter().map(|&(r, c)| motors.patch(r, c)).collect();
            let ch: Vec<Mat> = chunk.iter().map(|&(r, c)| chem.patch(r, c)).collect();
            let m = Mat::vstack(&m.iter().collect::<Vec<_>>())?;
            let ch = Mat::vstack(&ch.iter().collect::<Vec<_>>())?;
            let pred = model.predict_batch(&m, &ch, chunk.len())?;
            Ok((0..chunk.len()).map(|b| pred.get(b, CENTRE)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// `steps` frames. After each step the prediction is appended to the
/// chemistry window and `program` frame `k` to the motor window, so
/// `program` row `k` is the motor setting at the time of predicted frame `k`.
pub fn upscale_rollout(field0: &FieldState, program: &Field, steps: usize, model: &impl WorldModel) -> Result<Field> {
    upscale_rollout_with(field0, program, steps, model, |_, _| {})
}

/// [`upscale_rollout`] with a callback after every frame.
pub fn upscale_rollout_with(
    field0: &FieldState,
    program: &Field,
    steps: usize,
    model: &impl WorldModel,
    mut on_frame: impl FnMut(usize, &[f64]),
) -> Result<Field> {
    if steps < 1 {
        return Err(Error::InvalidArgument("an upscaled rollout needs at least one step".into()));
    }
    if program.len() < steps {
        return Err(Error::InvalidArgument(format!("motor program has {} frames for {steps} steps", program.len())));
    }
    if program.n != field0.n() {
        return Err(Error::Shape(format!("motor program is {0}x{0}, field is {1}x{1}", program.n, field0.n())));
    }
    check_motors(program)?;
    let n = field0.n();
    let mut state = field0.clone();
    let mut out = Field::zeros(steps, n);
    for k in 0..steps {
        let frame = upscale_step(&state, model)?;
        let frame: Vec<f64> = frame.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        on_frame(k, &frame);
        out.frames.row_mut(k).copy_from_slice(&frame);
        state.chem.push(&frame);
        state.motors.push(program.frame(k));
    }
    Ok(out)
}

/// Tensor file with one `steps x N x N` tensor named `chem`.
pub fn save_field(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let t = Tensor { name: "chem".into(), shape: vec![field.len(), field.n, field.n], data: field.frames.as_slice().to_vec() };
    tensorfile::save(path, json!({ "kind": "upscaled-field" }), &[t])
}

pub fn load_field(path: impl AsRef<Path>) -> Result<Field> {
    let (_, tensors) = tensorfile::load(path)?;
    let t = tensors.into_iter().find(|t| t.name == "chem").ok_or_else(|| Error::Format("no chem tensor".into()))?;
    let [steps, n, m] = t.shape[..] else {
        return Err(Error::Format(format!("chem tensor has shape {:?}", t.shape)));
    };
    if n != m {
        return Err(Error::Format(format!("chem frames are {n}x{m}")));
    }
    Field::new(n, Mat::from_vec(steps, n * n, t.data)?)
}

/// White-to-blue heatmap of one frame, each cell drawn as `scale x scale` pixels.
pub fn write_heatmap_png(path: impl AsRef<Path>, frame: &[f64], n: usize, scale: u32) -> Result<()> {
    if frame.len() != n * n || scale == 0 {
        return Err(Error::Shape(format!("{} values for a {n}x{n} heatmap", frame.len())));
    }
    let side = n as u32 * scale;
    let img = image::RgbImage::from_fn(side, side, |x, y| {
        let v = frame[(y / scale) as usize * n + (x / scale) as usize].clamp(0.0, 1.0);
        let fade = (255.0 * (1.0 - v)).round() as u8;
        image::Rgb([fade, fade, 255])
    });
    img.save(path).map_err(|e| Error::Io(std::io::Error::other(e)))
}
