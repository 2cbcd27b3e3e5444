use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use surrogate_core::data::{MotorFrame, CELLS};
use surrogate_core::rl::{controller_features, Objective};
use tokio::sync::Mutex;
use tokio_stream::wrappers::BroadcastStream;

use crate::error::{ApiError, ApiResult};
use crate::jobs::{JobKind, JobRequest};
use crate::session::{seed_state, SeedMode, Session};
use crate::AppState;

/// Largest `n` accepted by one step request.
pub const MAX_STEPS_PER_REQUEST: usize = 10_000;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/models", get(list_models))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/motors", post(set_motors))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/suggest", post(suggest))
        .route("/sessions/{id}/stream", get(stream_session))
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(job_status))
        .fallback(|| async { ApiError::not_found("route") })
        .with_state(state)
}

/// JSON body; an empty body reads as `{}`.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw).map_err(|e| match e.classify() {
        serde_json::error::Category::Syntax | serde_json::error::Category::Eof => {
            ApiError::new(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}"))
        }
        _ => ApiError::unprocessable(e.to_string()),
    })
}

async fn list_models(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "models": app.model_ids() }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    model: String,
    #[serde(default)]
    seed: SeedMode,
    #[serde(default)]
    synth_seed: u64,
    #[serde(default)]
    objective: Option<Objective>,
}

async fn create_session(State(app): State<AppState>, bytes: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = body(&bytes)?;
    let model = app.model(&req.model)?;
    let state = seed_state(req.seed, model.config().seq_len, req.synth_seed)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::new(id.clone(), req.model, model, state, req.objective);
    let desc = session.describe();
    app.inner.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(desc)))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let s = s.lock().await;
    Ok(Json(s.describe()))
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    // dropping the session drops its event sender, which ends open streams
    app.inner.sessions.write().unwrap().remove(&id).ok_or_else(|| ApiError::not_found("session"))?;
    Ok(Json(json!({ "deleted": id })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetMotors {
    motors: Vec<f64>,
}

async fn set_motors(State(app): State<AppState>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let req: SetMotors = body(&bytes)?;
    if req.motors.len() != CELLS {
        return Err(ApiError::unprocessable(format!("motors needs {CELLS} values, got {}", req.motors.len())));
    }
    let frame = MotorFrame::new(&req.motors).map_err(|e| ApiError::unprocessable(format!("motor range: {e}")))?;
    let mut s = s.lock().await;
    s.pending = frame;
    Ok(Json(json!({ "id": id, "t": s.t, "pending_motors": frame.speeds().to_vec() })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRequest {
    #[serde(default = "one")]
    n: usize,
}

fn one() -> usize {
    1
}

async fn step_session(State(app): State<AppState>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let req: StepRequest = body(&bytes)?;
    if req.n < 1 || req.n > MAX_STEPS_PER_REQUEST {
        return Err(ApiError::unprocessable(format!("n must be in 1..={MAX_STEPS_PER_REQUEST}")));
    }
    // the owned guard keeps this session's steps strictly sequential
    let mut guard = s.lock_owned().await;
    let events = tokio::task::spawn_blocking(move || guard.advance(req.n))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let t = events.last().map(|e| e.t).unwrap_or_default();
    Ok(Json(json!({ "id": id, "t": t, "frames": events })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuggestRequest {
    #[serde(default)]
    objective: Option<Objective>,
}

async fn suggest(State(app): State<AppState>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let req: SuggestRequest = body(&bytes)?;
    let s = s.lock().await;
    let objective = req
        .objective
        .or(s.objective)
        .ok_or_else(|| ApiError::unprocessable("no objective given and the session has none"))?;
    let ctrl = app
        .controller(&s.model_id, objective)
        .ok_or_else(|| ApiError::conflict(format!("no controller trained for objective {objective:?}")))?;
    let features = controller_features(&s.model, &s.state, ctrl.cfg.input)?;
    let motors = ctrl.forward(&features)?;
    Ok(Json(json!({ "id": s.id, "t": s.t, "objective": objective, "motors": motors.speeds().to_vec() })))
}

async fn stream_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let s = app.session(&id)?;
    // subscribe under the lock so no step falls between the snapshot and the feed
    let (first, rx) = {
        let s = s.lock().await;
        (s.snapshot(), s.events.subscribe())
    };
    drop(s);
    let to_event = |ev: &crate::StepEvent| Event::default().event("step").json_data(ev).expect("plain numbers serialise");
    let first = to_event(&first);
    let live = BroadcastStream::new(rx).filter_map(move |r| async move { r.ok().map(|ev| Ok(to_event(&ev))) });
    Ok(Sse::new(stream::once(async move { Ok(first) }).chain(live)).keep_alive(KeepAlive::default()))
}

async fn submit_job(State(app): State<AppState>, bytes: Bytes) -> ApiResult<impl IntoResponse> {
    let req: JobRequest = body(&bytes)?;
    app.model(&req.model)?;
    let parsed = match req.kind {
        JobKind::Ga => crate::jobs::JobConfig::ga(req.config)?,
        JobKind::RlTrain => crate::jobs::JobConfig::rl(req.config)?,
    };
    let record = app.inner.jobs.submit(req.kind, req.model, parsed)?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn job_status(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<crate::JobRecord>> {
    app.inner.jobs.get(&id).map(Json).ok_or_else(|| ApiError::not_found("job"))
}
