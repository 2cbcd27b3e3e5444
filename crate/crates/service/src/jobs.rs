use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::json;
use surrogate_core::data::CELLS;
use surrogate_core::ga::{run_ga_with, save_ga_outputs, GAConfig};
use surrogate_core::rl::{save_rl_history, train_controller, ControllerConfig};
use surrogate_core::Mat;
use tokio::sync::{mpsc, Mutex};

use crate::error::{ApiError, ApiResult};
use crate::session::{now_secs, seed_state, SeedMode};
use crate::AppState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobKind {
    Ga,
    RlTrain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub model: String,
    pub status: JobStatus,
    /// Fraction of generations or episodes finished.
    pub progress: f64,
    pub result_path: Option<String>,
    pub result: Option<serde_json::Value>,
    pub error: Option<String>,
    pub created_at: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct JobRequest {
    pub kind: JobKind,
    pub model: String,
    #[serde(default = "empty_object")]
    pub config: serde_json::Value,
}

fn empty_object() -> serde_json::Value {
    json!({})
}

pub(crate) enum JobConfig {
    Ga(GAConfig),
    Rl(ControllerConfig),
}

impl JobConfig {
    pub fn ga(v: serde_json::Value) -> ApiResult<Self> {
        let cfg: GAConfig = serde_json::from_value(v).map_err(|e| ApiError::unprocessable(format!("GA config: {e}")))?;
        cfg.validate()?;
        Ok(Self::Ga(cfg))
    }

    pub fn rl(v: serde_json::Value) -> ApiResult<Self> {
        let cfg: ControllerConfig =
            serde_json::from_value(v).map_err(|e| ApiError::unprocessable(format!("controller config: {e}")))?;
        cfg.validate()?;
        Ok(Self::Rl(cfg))
    }
}

pub(crate) struct Queued {
    id: String,
    model: String,
    cfg: JobConfig,
}

pub(crate) struct JobQueue {
    records: RwLock<HashMap<String, JobRecord>>,
    tx: mpsc::UnboundedSender<Queued>,
}

pub(crate) type Receiver = Arc<Mutex<mpsc::UnboundedReceiver<Queued>>>;

impl JobQueue {
    pub fn new() -> (Self, Receiver) {
        let (tx, rx) = mpsc::unbounded_channel();
        (Self { records: RwLock::default(), tx }, Arc::new(Mutex::new(rx)))
    }

    pub fn submit(&self, kind: JobKind, model: String, cfg: JobConfig) -> ApiResult<JobRecord> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let record = JobRecord {
            id: id.clone(),
            kind,
            model: model.clone(),
            status: JobStatus::Queued,
            progress: 0.0,
            result_path: None,
            result: None,
            error: None,
            created_at: now_secs(),
        };
        self.records.write().unwrap().insert(id.clone(), record.clone());
        self.tx.send(Queued { id, model, cfg }).map_err(|_| ApiError::internal("job workers have stopped"))?;
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.records.read().unwrap().get(id).cloned()
    }

    /// Status only moves forward and progress never decreases.
    fn update(&self, id: &str, status: JobStatus, progress: f64) {
        if let Some(r) = self.records.write().unwrap().get_mut(id) {
            r.status = r.status.max(status);
            r.progress = r.progress.max(progress.clamp(0.0, 1.0));
        }
    }

    fn finish(&self, id: &str, outcome: Result<(String, serde_json::Value), String>) {
        if let Some(r) = self.records.write().unwrap().get_mut(id) {
            match outcome {
                Ok((path, value)) => {
                    r.status = JobStatus::Done;
                    r.progress = 1.0;
                    r.result_path = Some(path);
                    r.result = Some(value);
                }
                Err(e) => {
                    r.status = JobStatus::Failed;
                    r.error = Some(e);
                }
            }
        }
    }
}

pub(crate) fn spawn_workers(app: AppState, rx: Receiver, workers: usize) {
    for _ in 0..workers {
        let app = app.clone();
        let rx = rx.clone();
        tokio::spawn(async move {
            loop {
                let job = { rx.lock().await.recv().await };
                let Some(job) = job else { break };
                let id = job.id.clone();
                app.inner.jobs.update(&id, JobStatus::Running, 0.0);
                let worker_app = app.clone();
                let outcome = tokio::task::spawn_blocking(move || execute(&worker_app, job))
                    .await
                    .unwrap_or_else(|e| Err(format!("job panicked: {e}")));
                if let Err(e) = &outcome {
                    log::warn!("job {id} failed: {e}");
                }
                app.inner.jobs.finish(&id, outcome);
            }
        });
    }
}

fn execute(app: &AppState, job: Queued) -> Result<(String, serde_json::Value), String> {
    let model = app.model(&job.model).map_err(|e| e.message)?;
    let dir = app.inner.cfg.out_dir.join("jobs").join(&job.id);
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let queue = &app.inner.jobs;
    let l = model.config().seq_len;
    match job.cfg {
        JobConfig::Ga(cfg) => {
            let total = cfg.n_generations as f64;
            let result = run_ga_with(&*model, &Mat::zeros(l, CELLS), &cfg, false, |g| {
                queue.update(&job.id, JobStatus::Running, (g.generation + 1) as f64 / total)
            })
            .map_err(|e| e.to_string())?;
            save_ga_outputs(&dir, &result).map_err(|e| e.to_string())?;
            let value = json!({
                "genes": result.best.genes().to_vec(),
                "score": result.fitness.score,
                "bits": result.fitness.bits,
                "best_genome": path_str(&dir.join("best_genome.json")),
            });
            Ok((path_str(&dir), value))
        }
        JobConfig::Rl(cfg) => {
            let states = (0..4)
                .map(|i| seed_state(SeedMode::Synthetic, l, cfg.seed.wrapping_add(i)))
                .collect::<surrogate_core::Result<Vec<_>>>()
                .map_err(|e| e.to_string())?;
            let total = cfg.episodes as f64;
            let mut means = Vec::with_capacity(cfg.episodes);
            let (ctrl, history) = train_controller(&model, &cfg, &states, |ep, mean| {
                means.push(mean);
                queue.update(&job.id, JobStatus::Running, (ep + 1) as f64 / total);
            })
            .map_err(|e| e.to_string())?;
            let ctrl_path = dir.join("controller.bin");
            ctrl.save(&ctrl_path).map_err(|e| e.to_string())?;
            save_rl_history(dir.join("rl_history.csv"), &history).map_err(|e| e.to_string())?;
            app.add_controller(job.model.clone(), ctrl);
            let value = json!({
                "objective": cfg.objective,
                "controller": path_str(&ctrl_path),
                "episode_mean_rewards": means,
            });
            Ok((path_str(&dir), value))
        }
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
