//! HTTP front end for live steering of the surrogate: per-session rolling
//! windows, pending motor frames, stepping, controller suggestions, a
//! server-sent event stream per session and a background queue for GA and
//! controller-training jobs.

mod error;
mod jobs;
mod routes;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use surrogate_core::model::Transformer;
use surrogate_core::rl::{Controller, Objective};
use tokio::sync::Mutex;

pub use error::{ApiError, ApiResult};
pub use jobs::{JobKind, JobRecord, JobStatus};
pub use routes::router;
pub use session::{SeedMode, StepEvent};

use session::Session;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Where job outputs go, one directory per job.
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("service-out"), workers: 1 }
    }
}

/// Shared state behind every handler. Models are immutable once registered.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    cfg: ServiceConfig,
    models: RwLock<HashMap<String, Arc<Transformer>>>,
    controllers: RwLock<HashMap<(String, Objective), Arc<Controller>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    jobs: jobs::JobQueue,
}

impl AppState {
    /// Starts the job workers, so it must run inside a tokio runtime.
    pub fn new(cfg: ServiceConfig) -> Self {
        let (queue, rx) = jobs::JobQueue::new();
        let state = Self {
            inner: Arc::new(Inner {
                cfg,
                models: RwLock::default(),
                controllers: RwLock::default(),
                sessions: RwLock::default(),
                jobs: queue,
            }),
        };
        jobs::spawn_workers(state.clone(), rx, state.inner.cfg.workers.max(1));
        state
    }

    pub fn add_model(&self, id: impl Into<String>, model: Transformer) {
        self.inner.models.write().unwrap().insert(id.into(), Arc::new(model));
    }

    pub fn add_controller(&self, model_id: impl Into<String>, controller: Controller) {
        let key = (model_id.into(), controller.cfg.objective);
        self.inner.controllers.write().unwrap().insert(key, Arc::new(controller));
    }

    pub fn model_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.models.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn model(&self, id: &str) -> ApiResult<Arc<Transformer>> {
        self.inner.models.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("model"))
    }

    fn controller(&self, model_id: &str, objective: Objective) -> Option<Arc<Controller>> {
        self.inner.controllers.read().unwrap().get(&(model_id.to_string(), objective)).cloned()
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.inner.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("session"))
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
