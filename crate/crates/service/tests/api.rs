use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use surrogate_core::model::{ModelConfig, OutputActivation, Transformer};
use surrogate_core::rl::{Controller, ControllerConfig};
use surrogate_service::{router, AppState, ServiceConfig, StepEvent};
use tower::ServiceExt;

fn tiny_model() -> Transformer {
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 8,
        d_ff_head: 8,
        seq_len: 4,
        output_activation: OutputActivation::Sigmoid,
        ..ModelConfig::default()
    };
    let mut m = Transformer::new(cfg, 3).unwrap();
    m.set_ready(true);
    m
}

fn app(dir: &std::path::Path) -> (AppState, Router) {
    let state = AppState::new(ServiceConfig { out_dir: dir.to_path_buf(), workers: 1 });
    state.add_model("m1", tiny_model());
    (state.clone(), router(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).expect("JSON body") };
    (status, v)
}

async fn new_session(app: &Router, extra: Value) -> String {
    let mut b = json!({ "model": "m1", "seed": "zeros" });
    b.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    let (s, v) = call(app, "POST", "/sessions", Some(b)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

fn frames(v: &Value) -> Vec<Vec<f64>> {
    v["frames"].as_array().unwrap().iter().map(|f| serde_json::from_value(f["chem"].clone()).unwrap()).collect()
}

#[tokio::test]
async fn sessions_are_created_with_distinct_ids() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let a = new_session(&app, json!({})).await;
    let b = new_session(&app, json!({ "seed": "synthetic", "synth_seed": 4 })).await;
    assert_ne!(a, b);
    let (s, v) = call(&app, "GET", &format!("/sessions/{b}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["t"], 0);
    assert_eq!(v["seq_len"], 4);
    let (s, v) = call(&app, "POST", "/sessions", Some(json!({ "model": "nope" }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v, json!({ "error": "model not found" }));
}

#[tokio::test]
async fn motor_validation() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let id = new_session(&app, json!({})).await;
    let uri = format!("/sessions/{id}/motors");
    let (s, _) = call(&app, "POST", &uri, Some(json!({ "motors": vec![0.0; 25] }))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = call(&app, "POST", &uri, Some(json!({ "motors": vec![0.0; 24] }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("25"));
    let mut m = vec![0.0; 25];
    m[3] = 1.5;
    let (s, v) = call(&app, "POST", &uri, Some(json!({ "motors": m }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].is_string());
    let (s, _) = call(&app, "POST", "/sessions/missing/motors", Some(json!({ "motors": vec![0.0; 25] }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let req = Request::post(&uri).body(Body::from("{not json")).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn stepping_returns_frames_and_advances_time() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let id = new_session(&app, json!({})).await;
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/step"), None).await;
    assert_eq!(s, StatusCode::OK);
    let f = frames(&v);
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].len(), 25);
    assert!(f[0].iter().all(|x| (0.0..=1.0).contains(x)));
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({ "n": 3 }))).await;
    assert_eq!(frames(&v).len(), 3);
    assert_eq!(v["t"], 4);
    let (s, _) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({ "n": 0 }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/sessions/missing/step", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

async fn drive(app: &Router, id: &str, program: &[(f64, usize)]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for &(speed, n) in program {
        let m: Vec<f64> = (0..25).map(|c| if c % 3 == 0 { speed } else { -speed / 2.0 }).collect();
        call(app, "POST", &format!("/sessions/{id}/motors"), Some(json!({ "motors": m }))).await;
        let (_, v) = call(app, "POST", &format!("/sessions/{id}/step"), Some(json!({ "n": n }))).await;
        out.extend(frames(&v));
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_replay_and_stay_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let pa = [(0.9, 3), (-0.4, 2), (0.1, 4)];
    let pb = [(-1.0, 5), (0.6, 4)];
    let (a, b) = (new_session(&app, json!({})).await, new_session(&app, json!({})).await);
    let (ra, rb) = tokio::join!(drive(&app, &a, &pa), drive(&app, &b, &pb));
    let serial_a = drive(&app, &new_session(&app, json!({})).await, &pa).await;
    let serial_b = drive(&app, &new_session(&app, json!({})).await, &pb).await;
    assert_eq!(ra, serial_a);
    assert_eq!(rb, serial_b);
    assert_ne!(ra, rb);
}

#[tokio::test]
async fn suggestions_need_a_controller_and_leave_the_session_alone() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(dir.path());
    let id = new_session(&app, json!({ "objective": "maximize" })).await;
    let uri = format!("/sessions/{id}/suggest");
    let (s, v) = call(&app, "POST", &uri, None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["error"].is_string());
    let cfg = ControllerConfig { hidden: 4, ..ControllerConfig::default() };
    state.add_controller("m1", Controller::zeroed(cfg, 8).unwrap());
    let (s, first) = call(&app, "POST", &uri, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first["motors"], json!(vec![0.0; 25]));
    let (_, second) = call(&app, "POST", &uri, None).await;
    assert_eq!(first, second);
    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["t"], 0);
    assert_eq!(v["pending_motors"], json!(vec![0.0; 25]));
    let (s, _) = call(&app, "POST", &uri, Some(json!({ "objective": "minimize" }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let plain = new_session(&app, json!({})).await;
    let (s, _) = call(&app, "POST", &format!("/sessions/{plain}/suggest"), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

async fn wait_for_job(app: &Router, id: &str) -> Value {
    let mut last = -1.0;
    for _ in 0..600 {
        let (s, v) = call(app, "GET", &format!("/jobs/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        let p = v["progress"].as_f64().unwrap();
        assert!(p >= last, "progress went back from {last} to {p}");
        last = p;
        match v["status"].as_str().unwrap() {
            "done" | "failed" => return v,
            _ => tokio::time::sleep(Duration::from_millis(50)).await,
        }
    }
    panic!("job {id} did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn ga_job_runs_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let cfg = json!({ "pop_size": 16, "n_elite": 4, "n_generations": 3, "rollout_horizon": 10 });
    let (s, v) = call(&app, "POST", "/jobs", Some(json!({ "kind": "ga", "model": "m1", "config": cfg }))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["status"], "queued");
    let done = wait_for_job(&app, v["id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(done["progress"], 1.0);
    let best = std::path::Path::new(done["result"]["best_genome"].as_str().unwrap());
    let genome: Value = serde_json::from_str(&std::fs::read_to_string(best).unwrap()).unwrap();
    assert_eq!(genome["genes"].as_array().unwrap().len(), 15);
}

#[tokio::test]
async fn job_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let (s, _) = call(&app, "GET", "/jobs/unknown", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    for cfg in [json!({ "pop_size": 0 }), json!({ "bogus": 1 }), json!({ "pop_size": 8, "n_elite": 9 })] {
        let (s, v) = call(&app, "POST", "/jobs", Some(json!({ "kind": "ga", "model": "m1", "config": cfg }))).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    }
    let (s, _) = call(&app, "POST", "/jobs", Some(json!({ "kind": "rl-train", "model": "m1", "config": { "lr": -1.0 } }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&app, "POST", "/jobs", Some(json!({ "kind": "ga", "model": "m9" }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn trained_controller_becomes_available_for_suggestions() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let cfg = json!({ "hidden": 8, "episodes": 2, "episode_len": 3, "objective": "minimize" });
    let (_, v) = call(&app, "POST", "/jobs", Some(json!({ "kind": "rl-train", "model": "m1", "config": cfg }))).await;
    let done = wait_for_job(&app, v["id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    assert!(std::path::Path::new(done["result"]["controller"].as_str().unwrap()).exists());
    let id = new_session(&app, json!({ "objective": "minimize" })).await;
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/suggest"), None).await;
    assert_eq!(s, StatusCode::OK);
    let m: Vec<f64> = serde_json::from_value(v["motors"].clone()).unwrap();
    assert_eq!(m.len(), 25);
    assert!(m.iter().all(|x| x.abs() < 1.0));
}

/// Reads SSE frames until `n` events arrive or the stream ends.
async fn read_events(body: &mut Body, n: usize) -> (Vec<StepEvent>, bool) {
    let mut buf = String::new();
    let mut events = Vec::new();
    while events.len() < n {
        let Some(frame) = tokio::time::timeout(Duration::from_secs(10), body.frame()).await.expect("stream stalled") else {
            return (events, true);
        };
        let frame = frame.unwrap();
        let Ok(data) = frame.into_data() else { continue };
        buf.push_str(std::str::from_utf8(&data).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            if let Some(line) = block.lines().find(|l| l.starts_with("data:")) {
                events.push(serde_json::from_str(line.trim_start_matches("data:").trim()).unwrap());
            }
        }
    }
    (events, false)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_follows_steps_and_closes_on_delete() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(dir.path());
    let id = new_session(&app, json!({ "objective": "maximize" })).await;
    call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({ "n": 2 }))).await;
    let resp = app.clone().oneshot(Request::get(format!("/sessions/{id}/stream")).body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    let (first, _) = read_events(&mut body, 1).await;
    assert_eq!(first[0].t, 2);
    assert_eq!(first[0].reward, None);
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({ "n": 3 }))).await;
    let (evs, _) = read_events(&mut body, 3).await;
    assert_eq!(evs.iter().map(|e| e.t).collect::<Vec<_>>(), vec![3, 4, 5]);
    assert_eq!(evs.iter().map(|e| e.chem.clone()).collect::<Vec<_>>(), frames(&v));
    assert!(evs.iter().all(|e| e.reward.is_some() && e.motors.len() == 25));
    let (s, _) = call(&app, "DELETE", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (rest, closed) = read_events(&mut body, 1).await;
    assert!(rest.is_empty() && closed);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/stream"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
