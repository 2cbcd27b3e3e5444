//! One-hidden-layer controller trained by backpropagating a centre-cell
//! objective through the frozen transformer.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{random_motor_program, synth_experiment, ExperimentRecord, MotorFrame, ProgramConfig, SynthConfig, CELLS, CENTRE};
use crate::error::{Error, Result};
use crate::model::transformer::Leaves;
use crate::model::{Mode, Transformer};
use crate::nn::{Adam, AdamConfig, ParamSet, Tape, Var};
use crate::tensor::Mat;
use crate::tensorfile::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Centre cell oscillating more than the rest.
    Maximize,
    Minimize,
}

impl Objective {
    pub fn sign(self) -> f64 {
        match self {
            Objective::Maximize => 1.0,
            Objective::Minimize => -1.0,
        }
    }
}

/// What the controller sees of the world model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerInput {
    /// Decoder hidden state averaged over the window (`d_model` values).
    DecoderHidden,
    /// The pooled hidden state followed by the cross-attention weights
    /// averaged over layers, heads and queries (`seq_len` more values).
    HiddenAndAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub out: usize,
    pub objective: Objective,
    pub lr: f64,
    pub episodes: usize,
    pub episode_len: usize,
    pub input: ControllerInput,
    pub seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            hidden: 1024,
            out: CELLS,
            objective: Objective::Maximize,
            lr: 1e-4,
            episodes: 20,
            episode_len: 150,
            input: ControllerInput::DecoderHidden,
            seed: 0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.out != CELLS {
            return Err(Error::InvalidArgument(format!("controller needs hidden > 0 and out = {CELLS}")));
        }
        if !(self.lr > 0.0) || self.episodes == 0 || self.episode_len == 0 {
            return Err(Error::InvalidArgument("lr, episodes and episode_len must be positive".into()));
        }
        Ok(())
    }
}

/// The rolling windows fed to the transformer. The motor window ends one
/// frame before the chemistry window: row `k` of `motors` is the setting that
/// turned chemistry row `k` into row `k + 1`, and the next step appends the
/// motor frame applied to the latest chemistry.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlState {
    pub motors: Mat,
    pub chem: Mat,
}

impl ControlState {
    pub fn new(motors: Mat, chem: Mat) -> Result<Self> {
        if motors.shape() != chem.shape() || motors.cols() != CELLS || motors.rows() == 0 {
            return Err(Error::Shape(format!("windows {:?} and {:?}", motors.shape(), chem.shape())));
        }
        if motors.as_slice().iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::OutOfRange("motor window outside [-1, 1]".into()));
        }
        if chem.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange("chemistry window outside [0, 1]".into()));
        }
        Ok(Self { motors, chem })
    }

    /// Motors off, no oscillation.
    pub fn zeros(seq_len: usize) -> Self {
        Self { motors: Mat::zeros(seq_len, CELLS), chem: Mat::zeros(seq_len, CELLS) }
    }

    /// Chemistry frames `start + 1 ..= start + seq_len` of a record with the
    /// motors that led to them.
    pub fn from_record(record: &ExperimentRecord, start: usize, seq_len: usize) -> Result<Self> {
        if start + seq_len + 1 > record.len() {
            return Err(Error::InsufficientData(format!("record of {} frames has no window at {start}", record.len())));
        }
        Self::new(record.motor_matrix().slice_rows(start, seq_len), record.chem_matrix().slice_rows(start + 1, seq_len))
    }

    /// The opening window of a freshly simulated reference experiment.
    pub fn synthetic(seq_len: usize, seed: u64) -> Result<Self> {
        let cfg = SynthConfig { steps: seq_len + 1, seed, ..SynthConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let program = random_motor_program(cfg.steps, &ProgramConfig::default(), &mut rng)?;
        Self::from_record(&synth_experiment(&cfg, &program)?, 0, seq_len)
    }

    pub fn seq_len(&self) -> usize {
        self.motors.rows()
    }

    /// Drops the oldest frame of both windows and appends the new ones; the
    /// chemistry frame is clamped into `[0, 1]`.
    pub fn push(&mut self, motor: &MotorFrame, chem: &[f64]) {
        shift_in(&mut self.motors, motor.speeds());
        let c: Vec<f64> = chem.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        shift_in(&mut self.chem, &c);
    }
}

fn shift_in(m: &mut Mat, row: &[f64]) {
    let w = m.cols();
    let s = m.as_mut_slice();
    s.copy_within(w.., 0);
    let n = s.len();
    s[n - w..].copy_from_slice(row);
}

/// Centre minus the mean of the other cells, signed by the objective.
pub fn centre_reward(frame: &[f64], objective: Objective) -> f64 {
    let centre = frame[CENTRE];
    let rest = (frame.iter().sum::<f64>() - centre) / (CELLS - 1) as f64;
    objective.sign() * (centre - rest)
}

fn reward_coeffs(objective: Objective) -> Mat {
    let mut c = Mat::filled(1, CELLS, -objective.sign() / (CELLS - 1) as f64);
    c.set(0, CENTRE, objective.sign());
    c
}

pub fn feature_dim(model: &Transformer, input: ControllerInput) -> usize {
    let cfg = model.config();
    match input {
        ControllerInput::DecoderHidden => cfg.d_model,
        ControllerInput::HiddenAndAttention => cfg.d_model + cfg.seq_len,
    }
}

/// Controller input for the current state.
pub fn controller_features(model: &Transformer, state: &ControlState, input: ControllerInput) -> Result<Vec<f64>> {
    let out = model.model_forward(&state.motors, &state.chem, Mode::Eval)?;
    let mut f = out.pooled_hidden(0);
    if input == ControllerInput::HiddenAndAttention {
        let mut acc = vec![0.0; state.seq_len()];
        let mut n = 0usize;
        for w in out.attention.cross.iter().flatten() {
            for (a, v) in acc.iter_mut().zip(w.mean_rows()) {
                *a += v;
            }
            n += 1;
        }
        f.extend(acc.iter().map(|v| v / n.max(1) as f64));
    }
    Ok(f)
}

/// `tanh` hidden layer, `sigmoid` output mapped to speeds by `2u − 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub cfg: ControllerConfig,
    pub input_dim: usize,
    params: ParamSet,
}

const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;

impl Controller {
    pub fn new(cfg: ControllerConfig, input_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        params.push_glorot("ctrl.w1", input_dim, cfg.hidden, &mut rng);
        params.push("ctrl.b1", Mat::zeros(1, cfg.hidden));
        params.push_glorot("ctrl.w2", cfg.hidden, cfg.out, &mut rng);
        params.push("ctrl.b2", Mat::zeros(1, cfg.out));
        Ok(Self { cfg, input_dim, params })
    }

    /// All weights and biases zero: every output speed is exactly 0.
    pub fn zeroed(cfg: ControllerConfig, input_dim: usize) -> Result<Self> {
        let mut c = Self::new(cfg, input_dim, 0)?;
        for i in 0..c.params.len() {
            c.params.value_mut(i).as_mut_slice().fill(0.0);
        }
        Ok(c)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn graph(&self, tape: &mut Tape, features: &[f64], trainable: bool) -> Result<(Var, [Var; 4])> {
        if features.len() != self.input_dim {
            return Err(Error::Shape(format!("controller takes {} features, got {}", self.input_dim, features.len())));
        }
        let x = tape.constant(Mat::from_vec(1, features.len(), features.to_vec())?);
        let p: [Var; 4] = std::array::from_fn(|i| tape.param(i, self.params.value(i), trainable));
        let h = tape.linear(x, p[W1], p[B1]);
        let h = tape.tanh(h);
        let u = tape.linear(h, p[W2], p[B2]);
        let u = tape.sigmoid(u);
        Ok((tape.affine(u, 2.0, -1.0), p))
    }

    pub fn forward(&self, features: &[f64]) -> Result<MotorFrame> {
        let mut tape = Tape::eval();
        let (m, _) = self.graph(&mut tape, features, false)?;
        MotorFrame::clamped(tape.value(m).as_slice())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors: Vec<Tensor> = self
            .params
            .names()
            .iter()
            .zip(self.params.values())
            .map(|(n, v)| Tensor { name: n.clone(), shape: vec![v.rows(), v.cols()], data: v.as_slice().to_vec() })
            .collect();
        let meta = serde_json::json!({ "kind": "controller", "config": self.cfg, "input_dim": self.input_dim });
        tensorfile::save(path, meta, &tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (meta, tensors) = tensorfile::load(path)?;
        if meta["kind"] != "controller" {
            return Err(Error::Format("not a controller file".into()));
        }
        let cfg: ControllerConfig =
            serde_json::from_value(meta["config"].clone()).map_err(|e| Error::Format(format!("controller config: {e}")))?;
        let input_dim = meta["input_dim"].as_u64().ok_or_else(|| Error::Format("missing input_dim".into()))? as usize;
        let mut c = Self::new(cfg, input_dim, 0)?;
        for t in tensors {
            let i = c.params.find(&t.name).ok_or_else(|| Error::Format(format!("unexpected tensor {}", t.name)))?;
            let want = c.params.value(i).shape();
            if t.shape != [want.0, want.1] {
                return Err(Error::Format(format!("tensor {} has shape {:?}", t.name, t.shape)));
            }
            *c.params.value_mut(i) = Mat::from_vec(want.0, want.1, t.data)?;
        }
        Ok(c)
    }
}

pub fn controller_forward(features: &[f64], controller: &Controller) -> Result<MotorFrame> {
    controller.forward(features)
}

/// Reward of appending `new_motor`: the model's final-position prediction on
/// the shifted motor window and the current chemistry window.
pub fn controller_objective(state: &ControlState, new_motor: &MotorFrame, model: &Transformer, objective: Objective) -> Result<f64> {
    Ok(centre_reward(&predict_after(state, new_motor, model)?, objective))
}

/// The model's next chemistry frame when `new_motor` is applied now.
pub fn predict_after(state: &ControlState, new_motor: &MotorFrame, model: &Transformer) -> Result<Vec<f64>> {
    if !model.is_ready() {
        return Err(Error::ModelNotReady);
    }
    let mut motors = state.motors.clone();
    shift_in(&mut motors, new_motor.speeds());
    model.predict_next(&motors, &state.chem)
}

/// One differentiable control step.
pub struct StepGrad {
    pub reward: f64,
    pub motor: MotorFrame,
    pub prediction: Vec<f64>,
    /// Gradients of `−reward` for the controller's four tensors.
    pub grads: Vec<(usize, Mat)>,
}

/// Runs the controller on `features`, appends its output to the motor window
/// and backpropagates `−reward` through the frozen model to the controller.
pub fn controller_step_grad(
    model: &Transformer,
    controller: &Controller,
    state: &ControlState,
    features: &[f64],
    objective: Objective,
) -> Result<StepGrad> {
    if !model.is_ready() {
        return Err(Error::ModelNotReady);
    }
    let l = state.seq_len();
    if l != model.config().seq_len {
        return Err(Error::Shape(format!("state windows of {l}, model expects {}", model.config().seq_len)));
    }
    let mut tape = Tape::eval();
    let (motor, p) = controller.graph(&mut tape, features, true)?;
    let history = tape.constant(state.motors.slice_rows(1, l - 1));
    let window = tape.vstack(&[history, motor]);
    let chem = tape.constant(state.chem.clone());
    let mut leaves = Leaves::new(model.params(), false);
    let g = model.build(&mut tape, &mut leaves, window, chem, 1)?;
    let last = tape.slice_rows(g.prediction, l - 1, 1);
    let r = tape.dot_const(last, &reward_coeffs(objective));
    let loss = tape.combine(&[(r, -1.0)]);
    let grads = tape.backward(loss);
    let reward = tape.scalar(r);
    let grads = p
        .iter()
        .enumerate()
        .map(|(i, v)| (i, grads.wrt(*v).cloned().unwrap_or_else(|| Mat::zeros(controller.params.value(i).rows(), controller.params.value(i).cols()))))
        .collect();
    Ok(StepGrad {
        reward,
        motor: MotorFrame::clamped(tape.value(motor).as_slice())?,
        prediction: tape.value(last).as_slice().to_vec(),
        grads,
    })
}

/// Something that picks the next motor frame.
pub trait Policy {
    fn act(&mut self, model: &Transformer, state: &ControlState) -> Result<MotorFrame>;
}

impl Policy for &Controller {
    fn act(&mut self, model: &Transformer, state: &ControlState) -> Result<MotorFrame> {
        self.forward(&controller_features(model, state, self.cfg.input)?)
    }
}

/// Independent uniform speeds in `[-1, 1]` every step.
pub struct RandomPolicy(pub ChaCha8Rng);

impl Policy for RandomPolicy {
    fn act(&mut self, _model: &Transformer, _state: &ControlState) -> Result<MotorFrame> {
        let speeds: Vec<f64> = (0..CELLS).map(|_| self.0.random_range(-1.0..=1.0)).collect();
        MotorFrame::new(&speeds)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub motors: Vec<MotorFrame>,
    /// Predicted chemistry after each step.
    pub chem: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl Episode {
    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len().max(1) as f64
    }

    /// Mean over steps of centre minus the mean of the other cells (unsigned).
    pub fn mean_centre_contrast(&self) -> f64 {
        self.chem.iter().map(|c| centre_reward(c, Objective::Maximize)).sum::<f64>() / self.chem.len().max(1) as f64
    }
}

/// Closed-loop run without parameter updates.
pub fn control_episode(
    model: &Transformer,
    mut policy: impl Policy,
    state0: &ControlState,
    steps: usize,
    objective: Objective,
) -> Result<Episode> {
    if steps < 1 {
        return Err(Error::InvalidArgument("an episode needs at least one step".into()));
    }
    if !model.is_ready() {
        return Err(Error::ModelNotReady);
    }
    let mut state = state0.clone();
    let mut ep = Episode { motors: Vec::with_capacity(steps), chem: Vec::with_capacity(steps), rewards: Vec::with_capacity(steps) };
    for _ in 0..steps {
        let motor = policy.act(model, &state)?;
        let pred = predict_after(&state, &motor, model)?;
        ep.rewards.push(centre_reward(&pred, objective));
        state.push(&motor, &pred);
        ep.motors.push(motor);
        ep.chem.push(pred);
    }
    Ok(ep)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
}

/// Trains a controller from scratch. Each episode starts from
/// `initial_states[episode % len]`; every step takes one Adam step on the
/// controller. The transformer's weights hash is checked before and after.
pub fn train_controller(
    model: &Transformer,
    cfg: &ControllerConfig,
    initial_states: &[ControlState],
    mut on_episode: impl FnMut(usize, f64),
) -> Result<(Controller, Vec<RewardRecord>)> {
    cfg.validate()?;
    if initial_states.is_empty() {
        return Err(Error::EmptyInput("controller training needs an initial state".into()));
    }
    if !model.is_ready() {
        return Err(Error::ModelNotReady);
    }
    let frozen = model.weights_hash();
    let mut ctrl = Controller::new(cfg.clone(), feature_dim(model, cfg.input), cfg.seed)?;
    let mut opt = Adam::new(&ctrl.params, AdamConfig::default());
    let mut history = Vec::with_capacity(cfg.episodes * cfg.episode_len);
    let mut step_count = 0u64;
    for episode in 0..cfg.episodes {
        let mut state = initial_states[episode % initial_states.len()].clone();
        let mut total = 0.0;
        for step in 0..cfg.episode_len {
            let features = controller_features(model, &state, cfg.input)?;
            let sg = controller_step_grad(model, &ctrl, &state, &features, cfg.objective)?;
            step_count += 1;
            if !sg.reward.is_finite() || sg.grads.iter().any(|(_, g)| !g.is_finite()) {
                return Err(Error::TrainingDiverged { step: step_count, last_good: None });
            }
            opt.step(&mut ctrl.params, &sg.grads, cfg.lr);
            history.push(RewardRecord { episode, step, reward: sg.reward });
            total += sg.reward;
            state.push(&sg.motor, &sg.prediction);
        }
        on_episode(episode, total / cfg.episode_len as f64);
    }
    if model.weights_hash() != frozen {
        return Err(Error::InvalidData("transformer weights changed during controller training".into()));
    }
    Ok((ctrl, history))
}

pub fn write_rl_history(mut out: impl Write, history: &[RewardRecord]) -> Result<()> {
    writeln!(out, "episode,step,reward")?;
    for r in history {
        writeln!(out, "{},{},{}", r.episode, r.step, r.reward)?;
    }
    Ok(())
}

pub fn save_rl_history(path: impl AsRef<Path>, history: &[RewardRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_rl_history(&mut w, history)?;
    w.flush()?;
    Ok(())
}
