#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use warntriage_core::corpus::write_synthetic_corpus;
use warntriage_core::corpus::SynthSpec;
use warntriage_core::embedder::Dims;
use warntriage_service::api::{router, AppState};
use warntriage_service::{ops, Settings};

/// Small and fast settings; model quality is not the point here.
pub fn small_settings(data_dir: &Path) -> Settings {
    let mut s = Settings {
        data_dir: data_dir.to_path_buf(),
        ..Settings::default()
    };
    s.pretrain.dims = Dims { d_emb: 16, d_code: 48 };
    s.pretrain.epochs = 5;
    s.hyper.gbt.n_rounds = 30;
    s.hyper.forest.n_estimators = 20;
    s.hyper.net.units = 32;
    s.hyper.net.max_epochs = 20;
    s.auto_retrain = false;
    s
}

/// Generated, ingested, pretrained and trained once per test binary.
pub fn prepared_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::Builder::new().prefix("warntriage-fixture").tempdir().unwrap().keep();
        let corpus = dir.join("corpus.jsonl");
        let spec = SynthSpec::default().with("CWE-476", 60, 60, 80).with("CWE-252", 40, 40, 30);
        write_synthetic_corpus(&spec, 7, &corpus).unwrap();
        let settings = small_settings(&dir.join("data"));
        ops::ingest(&settings, &corpus).unwrap();
        ops::pretrain(&settings).unwrap();
        ops::train(&settings, "all").unwrap();
        dir.join("data")
    })
}

/// A private copy of the prepared data directory.
pub fn fresh_copy() -> (tempfile::TempDir, Settings) {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    for entry in std::fs::read_dir(prepared_dir()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), data.join(entry.file_name())).unwrap();
    }
    let settings = small_settings(&data);
    (tmp, settings)
}

pub fn app(settings: Settings) -> (Arc<AppState>, Router) {
    let state = Arc::new(AppState::load(settings).unwrap());
    (state.clone(), router(state))
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, "GET", uri, None).await
}

pub async fn verdict(app: &Router, id: &str, verdict: &str, user: &str) -> (StatusCode, Value) {
    let body = serde_json::json!({ "verdict": verdict, "user": user }).to_string();
    call(app, "POST", &format!("/api/warnings/{id}/verdict"), Some(&body)).await
}

/// Ids of a CWE's queue in API order.
pub async fn queue_ids(app: &Router, cwe: &str) -> Vec<String> {
    let (_, body) = get(app, &format!("/api/warnings?cwe={cwe}&limit=1000")).await;
    body["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["warning_id"].as_str().unwrap().to_string())
        .collect()
}
