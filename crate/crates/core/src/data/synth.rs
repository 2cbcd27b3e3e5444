//! Reference phase oscillator used to generate experiments at the desk.
//!
//! Every cell carries a phase that advances by a stirring-dependent rate each
//! step. A cell's rate mixes its own motor magnitude with the mean magnitude
//! of its 4-neighbourhood, plus a small baseline drift, and the observable is
//! a sharp pulse `max(0, sin φ)^p`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::frames::{ChemFrame, ExperimentRecord, MotorFrame, CELLS, GRID};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Phase advance per step at full stirring, rad/step.
    pub omega0: f64,
    /// Weight of the neighbours' stirring.
    pub kappa: f64,
    /// Baseline phase drift, rad/step.
    pub omega_b: f64,
    /// Pulse sharpness exponent (even).
    pub pulse_sharpness: u32,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { omega0: 0.35, kappa: 0.25, omega_b: 0.02, pulse_sharpness: 8, steps: 7200, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega0 > 0.0) {
            return Err(Error::InvalidArgument("omega0 must be positive".into()));
        }
        if !(self.kappa >= 0.0) || !(self.omega_b >= 0.0) {
            return Err(Error::InvalidArgument("kappa and omega_b must be non-negative".into()));
        }
        if self.pulse_sharpness < 2 || self.pulse_sharpness % 2 != 0 {
            return Err(Error::InvalidArgument("pulse sharpness must be an even integer >= 2".into()));
        }
        Ok(())
    }
}

/// 4-neighbourhood of every cell in row-major order.
pub fn neighbours(cell: usize) -> impl Iterator<Item = usize> {
    let (r, c) = ((cell / GRID) as isize, (cell % GRID) as isize);
    [(-1, 0), (1, 0), (0, -1), (0, 1)].into_iter().filter_map(move |(dr, dc)| {
        let (nr, nc) = (r + dr, c + dc);
        ((0..GRID as isize).contains(&nr) && (0..GRID as isize).contains(&nc)).then(|| (nr * GRID as isize + nc) as usize)
    })
}

/// Phase advance of every cell under one motor frame.
pub fn phase_rates(cfg: &SynthConfig, motors: &MotorFrame) -> [f64; CELLS] {
    let m = motors.speeds();
    let mut rates = [0.0; CELLS];
    for (c, rate) in rates.iter_mut().enumerate() {
        let (sum, n) = neighbours(c).fold((0.0, 0usize), |(s, n), j| (s + m[j].abs(), n + 1));
        let coupled = if n == 0 { 0.0 } else { sum / n as f64 };
        *rate = cfg.omega0 * (m[c].abs() + cfg.kappa * coupled) + cfg.omega_b;
    }
    rates
}

pub fn pulse(phase: f64, sharpness: u32) -> f64 {
    phase.sin().max(0.0).powi(sharpness as i32)
}

/// Runs the reference oscillator under `motor_program` (one frame per step).
pub fn synth_experiment(cfg: &SynthConfig, motor_program: &[MotorFrame]) -> Result<ExperimentRecord> {
    cfg.validate()?;
    if motor_program.len() != cfg.steps {
        return Err(Error::InvalidArgument(format!(
            "motor program has {} frames, config asks for {} steps",
            motor_program.len(),
            cfg.steps
        )));
    }
    let mut phase = [0.0; CELLS];
    if cfg.seed != 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for p in phase.iter_mut() {
            *p = rng.random_range(0.0..=0.1);
        }
    }
    let mut chem = Vec::with_capacity(cfg.steps);
    for motors in motor_program {
        let values: Vec<f64> = phase.iter().map(|&p| pulse(p, cfg.pulse_sharpness)).collect();
        chem.push(ChemFrame::new(&values)?);
        let rates = phase_rates(cfg, motors);
        for (p, r) in phase.iter_mut().zip(rates) {
            *p += r;
        }
    }
    ExperimentRecord::from_parts(motor_program.to_vec(), chem)
}

/// How random motor programs are drawn: piecewise-constant segments, each
/// enabling a random subset of motors at random speeds and directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProgramConfig {
    pub segment_min: usize,
    pub segment_max: usize,
    /// Fewest motors enabled in a segment.
    pub min_active: usize,
    pub min_speed: f64,
}

impl Default for ProgramConfig {
    fn default() -> Self {
        Self { segment_min: 30, segment_max: 60, min_active: 3, min_speed: 0.3 }
    }
}

pub fn random_motor_program(steps: usize, cfg: &ProgramConfig, rng: &mut impl Rng) -> Result<Vec<MotorFrame>> {
    if cfg.segment_min < 1 || cfg.segment_max < cfg.segment_min {
        return Err(Error::InvalidArgument("segment length range is empty".into()));
    }
    if cfg.min_active > CELLS || !(0.0..=1.0).contains(&cfg.min_speed) {
        return Err(Error::InvalidArgument("motor program bounds out of range".into()));
    }
    let mut program = Vec::with_capacity(steps);
    while program.len() < steps {
        let len = rng.random_range(cfg.segment_min..=cfg.segment_max);
        let active = rng.random_range(cfg.min_active..=CELLS);
        let mut order: Vec<usize> = (0..CELLS).collect();
        for i in 0..active {
            let j = rng.random_range(i..CELLS);
            order.swap(i, j);
        }
        let mut speeds = [0.0; CELLS];
        for &c in &order[..active] {
            let mag = rng.random_range(cfg.min_speed..=1.0);
            speeds[c] = if rng.random_bool(0.5) { mag } else { -mag };
        }
        let frame = MotorFrame::new(&speeds)?;
        program.extend(std::iter::repeat_n(frame, len.min(steps - program.len())));
    }
    Ok(program)
}

/// Convenience: draw a program and simulate it with `cfg.seed` driving both.
pub fn random_experiment(cfg: &SynthConfig, program: &ProgramConfig) -> Result<ExperimentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_a11_u64);
    let motors = random_motor_program(cfg.steps, program, &mut rng)?;
    synth_experiment(cfg, &motors)
}
