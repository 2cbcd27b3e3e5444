use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use surrogate_core::data::MotorFrame;
use surrogate_core::model::Transformer;
use surrogate_core::rl::{centre_reward, predict_after, ControlState, Objective};
use tokio::sync::broadcast;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedMode {
    /// Motors off and no oscillation in either window.
    #[default]
    Zeros,
    /// Windows cut from a freshly simulated reference experiment.
    Synthetic,
}

/// One SSE payload per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub t: u64,
    pub chem: Vec<f64>,
    pub motors: Vec<f64>,
    pub reward: Option<f64>,
}

pub(crate) struct Session {
    pub id: String,
    pub model_id: String,
    pub model: Arc<Transformer>,
    pub state: ControlState,
    pub pending: MotorFrame,
    pub t: u64,
    pub created_at: u64,
    pub objective: Option<Objective>,
    pub events: broadcast::Sender<StepEvent>,
}

pub(crate) fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub(crate) fn seed_state(mode: SeedMode, seq_len: usize, seed: u64) -> surrogate_core::Result<ControlState> {
    match mode {
        SeedMode::Zeros => Ok(ControlState::zeros(seq_len)),
        SeedMode::Synthetic => ControlState::synthetic(seq_len, seed),
    }
}

impl Session {
    pub fn new(
        id: String,
        model_id: String,
        model: Arc<Transformer>,
        state: ControlState,
        objective: Option<Objective>,
    ) -> Self {
        let (events, _) = broadcast::channel(1024);
        Self { id, model_id, model, state, pending: MotorFrame::OFF, t: 0, created_at: now_secs(), objective, events }
    }

    /// The event describing the current time: latest chemistry and the motors that produced it.
    pub fn snapshot(&self) -> StepEvent {
        let l = self.state.seq_len();
        StepEvent {
            t: self.t,
            chem: self.state.chem.row(l - 1).to_vec(),
            motors: self.state.motors.row(l - 1).to_vec(),
            reward: None,
        }
    }

    /// `n` steps holding the pending motor frame.
    pub fn advance(&mut self, n: usize) -> surrogate_core::Result<Vec<StepEvent>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let pred = predict_after(&self.state, &self.pending, &self.model)?;
            self.state.push(&self.pending, &pred);
            self.t += 1;
            let l = self.state.seq_len();
            let chem = self.state.chem.row(l - 1).to_vec();
            let ev = StepEvent {
                t: self.t,
                reward: self.objective.map(|o| centre_reward(&chem, o)),
                chem,
                motors: self.pending.speeds().to_vec(),
            };
            // no subscribers is fine
            let _ = self.events.send(ev.clone());
            out.push(ev);
        }
        Ok(out)
    }

    pub fn describe(&self) -> serde_json::Value {
        let snap = self.snapshot();
        serde_json::json!({
            "id": self.id,
            "model": self.model_id,
            "t": self.t,
            "seq_len": self.state.seq_len(),
            "created_at": self.created_at,
            "objective": self.objective,
            "pending_motors": self.pending.speeds().to_vec(),
            "chem": snap.chem,
            "motors": snap.motors,
        })
    }
}
