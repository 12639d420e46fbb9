//! HTTP/JSON API over a loaded data directory.
//!
//! Readers take the current [`Snapshot`] (registry plus banded open pool)
//! and never block on a retrain. Verdicts and retrains for one CWE are
//! serialized by a per-CWE lock, and a retrain becomes visible only when
//! the new snapshot is swapped in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;
use warntriage_core::corpus::{CweDataset, Split, WarningRecord};
use warntriage_core::embedder::EmbedderModel;
use warntriage_core::ensemble::{EnsembleModel, Registry};
use warntriage_core::evaluation::{compute_metrics, MetricsReport};
use warntriage_core::linalg::Matrix;
use warntriage_core::pipeline::{embed_records, predict_rows, split_data, ScoredWarning, SplitData};
use warntriage_core::workflow::{
    highlight_disagreements, Band, BandThresholds, FeedbackEvent, FeedbackStore, RecordOutcome,
    Verdict,
};

use crate::config::Settings;
use crate::data::{hyper_for, unix_ms, DataDir, RegistryLogEntry, Tuned};
use crate::error::{Error, Result};
use crate::ops::{feedback_labels, retrain_model, score_rows};

const DEFAULT_LIMIT: usize = 50;
const MAX_LIMIT: usize = 1000;
const TOP_CONTEXTS: usize = 5;

/// Inputs that do not change while the server runs: the frozen embedder,
/// the labeled splits and the open pool, all embedded once at startup.
pub struct Base {
    pub embedder: EmbedderModel,
    pub datasets: BTreeMap<String, CweDataset>,
    pub open: Vec<WarningRecord>,
    open_index: HashMap<String, usize>,
    open_x: Matrix,
    train: BTreeMap<String, SplitData>,
    val: BTreeMap<String, SplitData>,
    tuned: Tuned,
}

impl Base {
    pub fn load(dir: &DataDir) -> Result<Self> {
        let embedder = dir.load_embedder()?;
        let datasets = dir.load_datasets()?;
        let open = dir.load_open()?;
        let open_x = embed_records(&embedder, &open);
        let mut train = BTreeMap::new();
        let mut val = BTreeMap::new();
        for (cwe, ds) in &datasets {
            train.insert(cwe.clone(), split_data(ds, Split::Train, &embedder));
            val.insert(cwe.clone(), split_data(ds, Split::Val, &embedder));
        }
        Ok(Base {
            open_index: open.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect(),
            tuned: dir.load_tuned()?,
            embedder,
            datasets,
            open,
            open_x,
            train,
            val,
        })
    }

    fn open_rows(&self, cwe: &str) -> Vec<usize> {
        (0..self.open.len()).filter(|&i| self.open[i].cwe == cwe).collect()
    }

    fn cwes(&self) -> BTreeSet<String> {
        let mut all: BTreeSet<String> = self.datasets.keys().cloned().collect();
        all.extend(self.open.iter().map(|r| r.cwe.clone()));
        all
    }
}

/// Scores, bands and validation metrics of one live model.
#[derive(Debug, Clone)]
pub struct CweView {
    pub thresholds: BandThresholds,
    pub scored: Vec<ScoredWarning>,
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub registry: Registry,
    pub views: BTreeMap<String, Arc<CweView>>,
}

pub struct AppState {
    pub settings: Settings,
    pub dir: DataDir,
    pub base: Base,
    snapshot: RwLock<Arc<Snapshot>>,
    feedback: Mutex<FeedbackStore>,
    cwe_locks: BTreeMap<String, tokio::sync::Mutex<()>>,
    retraining: Mutex<BTreeSet<String>>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    /// Loads and scores everything under `settings.data_dir`. Blocking.
    pub fn load(settings: Settings) -> Result<Self> {
        let dir = DataDir::new(&settings.data_dir);
        let base = Base::load(&dir)?;
        let registry = dir.load_registry()?;
        let feedback = FeedbackStore::open(dir.feedback_path())?;
        let mut views = BTreeMap::new();
        for model in registry.models.values() {
            views.insert(model.cwe.clone(), Arc::new(build_view(&base, model)?));
        }
        let mut cwes = base.cwes();
        cwes.extend(registry.models.keys().cloned());
        Ok(AppState {
            cwe_locks: cwes.into_iter().map(|c| (c, tokio::sync::Mutex::new(()))).collect(),
            snapshot: RwLock::new(Arc::new(Snapshot { registry, views })),
            feedback: Mutex::new(feedback),
            retraining: Mutex::new(BTreeSet::new()),
            settings,
            dir,
            base,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn is_retraining(&self, cwe: &str) -> bool {
        self.retraining.lock().expect("retraining lock").contains(cwe)
    }

    /// Retrains `cwe` on its train split plus every verdict on its open
    /// warnings, then swaps in the new model and re-banded pool. On any
    /// failure the live model stays in place.
    pub async fn retrain(self: &Arc<Self>, cwe: &str) -> Result<u64> {
        let lock = self.cwe_locks.get(cwe).ok_or(Error::NotFound)?;
        let _guard = lock.lock().await;
        let snap = self.snapshot();
        let live = snap.registry.get(cwe).map_err(|_| Error::NotFound)?.clone();
        let labels = {
            let store = self.feedback.lock().expect("feedback lock");
            if store.staged(cwe, live.version).is_empty() {
                return Err(Error::NothingStaged(cwe.to_string()));
            }
            feedback_labels(&store, cwe)
        };
        let state = Arc::clone(self);
        let cwe_owned = cwe.to_string();
        let (registry, view, version) = tokio::task::spawn_blocking(move || {
            state.retrain_blocking(&cwe_owned, &snap.registry, &live, &labels)
        })
        .await
        .map_err(|e| Error::Internal(format!("retrain task failed: {e}")))??;

        let mut current = self.snapshot.write().expect("snapshot lock");
        let mut views = current.views.clone();
        views.insert(cwe.to_string(), Arc::new(view));
        *current = Arc::new(Snapshot { registry, views });
        log::info!("{cwe}: version {version} is live");
        Ok(version)
    }

    fn retrain_blocking(
        &self,
        cwe: &str,
        registry: &Registry,
        live: &EnsembleModel,
        labels: &BTreeMap<String, u8>,
    ) -> Result<(Registry, CweView, u64)> {
        let train = self
            .base
            .train
            .get(cwe)
            .ok_or_else(|| Error::Internal(format!("{cwe} has no labeled dataset")))?;
        let extra: Vec<(&[f64], u8)> = labels
            .iter()
            .filter_map(|(id, &label)| self.base.open_index.get(id).map(|&i| (self.base.open_x.row(i), label)))
            .collect();
        let hyper = hyper_for(&self.base.tuned, cwe, &self.settings.hyper);
        let model = retrain_model(live, train, &extra, &hyper)?;
        let mut registry = registry.clone();
        let version = registry.publish(model);
        let view = build_view(&self.base, registry.get(cwe)?)?;
        registry.save(self.dir.registry_path())?;
        self.dir.append_registry_log(&RegistryLogEntry {
            cwe: cwe.to_string(),
            version,
            trigger: "retrain".into(),
            n_train: train.y.len() + extra.len(),
            unix_ms: unix_ms(),
        })?;
        Ok((registry, view, version))
    }
}

fn build_view(base: &Base, model: &EnsembleModel) -> Result<CweView> {
    let rows = base.open_rows(&model.cwe);
    let ids: Vec<String> = rows.iter().map(|&i| base.open[i].id.clone()).collect();
    let (thresholds, scored) = score_rows(model, &ids, &base.open_x.select_rows(&rows))?;
    let metrics = match base.val.get(&model.cwe) {
        Some(val) if !val.y.is_empty() => {
            let preds = predict_rows(model, &val.ids, &val.x)?;
            let labels: Vec<u8> = preds.iter().map(|p| p.final_label).collect();
            let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
            Some(compute_metrics(&val.y, &labels, &scores)?.with_cwe(&model.cwe))
        }
        _ => None,
    };
    Ok(CweView {
        thresholds,
        scored,
        metrics,
    })
}

struct ApiError(Error);

impl<E: Into<Error>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use warntriage_core::Error as Core;
        let (status, message) = match &self.0 {
            Error::NotFound | Error::Core(Core::UnknownWarning(_) | Core::UnknownCwe(_)) => {
                (StatusCode::NOT_FOUND, "not found".to_string())
            }
            Error::BadRequest(m) => (StatusCode::BAD_REQUEST, m.clone()),
            Error::NothingStaged(_) => (StatusCode::CONFLICT, "nothing staged".to_string()),
            other => (StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        };
        if status.is_server_error() {
            log::error!("{message}");
        }
        (status, Json(json!({ "error": message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriageItem {
    pub warning_id: String,
    pub cwe: String,
    pub file_path: String,
    pub line: usize,
    pub band: Band,
    pub score: f64,
    pub member_probs: [f64; 3],
    pub final_label: u8,
    pub verdict_status: &'static str,
    pub model_version: u64,
    /// Dismissed by a developer but called true and ranked high by the model.
    pub disagreement: bool,
}

/// Queue order: band high to low, then score descending, then id.
fn queue_order(a: &TriageItem, b: &TriageItem) -> std::cmp::Ordering {
    b.band
        .cmp(&a.band)
        .then(b.score.total_cmp(&a.score))
        .then_with(|| a.warning_id.cmp(&b.warning_id))
}

fn triage_items(state: &AppState, snap: &Snapshot, cwes: &[&String]) -> Vec<TriageItem> {
    let store = state.feedback.lock().expect("feedback lock");
    let verdicts = store.latest_verdicts();
    let mut items = Vec::new();
    for &cwe in cwes {
        let Some(view) = snap.views.get(cwe) else { continue };
        let version = snap.registry.models.get(cwe).map_or(0, |m| m.version);
        let pairs: Vec<_> = view.scored.iter().map(|s| (s.prediction.clone(), s.band)).collect();
        let flagged: BTreeSet<String> = highlight_disagreements(&pairs, &store).into_iter().collect();
        for s in &view.scored {
            let p = &s.prediction;
            let record = &state.base.open[state.base.open_index[&p.warning_id]];
            items.push(TriageItem {
                warning_id: p.warning_id.clone(),
                cwe: cwe.clone(),
                file_path: record.file_path.clone(),
                line: record.line,
                band: s.band,
                score: p.score,
                member_probs: p.member_probs,
                final_label: p.final_label,
                verdict_status: verdicts.get(p.warning_id.as_str()).map_or("none", |v| v.as_str()),
                model_version: version,
                disagreement: flagged.contains(&p.warning_id),
            });
        }
    }
    items.sort_by(queue_order);
    items
}

fn parse_usize(params: &HashMap<String, String>, key: &str, default: usize) -> ApiResult<usize> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError(Error::BadRequest(format!("{key} must be a non-negative integer")))),
    }
}

async fn list_cwes(State(state): State<SharedState>) -> Json<Value> {
    let snap = state.snapshot();
    let store = state.feedback.lock().expect("feedback lock");
    let rows: Vec<Value> = state
        .cwe_locks
        .keys()
        .map(|cwe| {
            let version = snap.registry.models.get(cwe).map(|m| m.version);
            json!({
                "cwe": cwe,
                "model_version": version,
                "n_open": state.base.open_rows(cwe).len(),
                "staged": version.map_or(0, |v| store.staged(cwe, v).len()),
                "retrain_threshold": state.settings.retrain_threshold,
                "retraining": state.is_retraining(cwe),
                "thresholds": snap.views.get(cwe).map(|v| &v.thresholds),
            })
        })
        .collect();
    Json(json!({ "cwes": rows }))
}

async fn list_warnings(
    State(state): State<SharedState>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let snap = state.snapshot();
    let cwes: Vec<&String> = match params.get("cwe").filter(|c| !c.is_empty()) {
        Some(cwe) => vec![snap.views.get_key_value(cwe).ok_or(Error::NotFound)?.0],
        None => snap.views.keys().collect(),
    };
    let band = match params.get("band").filter(|b| !b.is_empty()) {
        Some(b) => Some(Band::parse(b).ok_or_else(|| Error::BadRequest(format!("unknown band {b:?}")))?),
        None => None,
    };
    let offset = parse_usize(&params, "offset", 0)?;
    let limit = parse_usize(&params, "limit", DEFAULT_LIMIT)?.min(MAX_LIMIT);
    let items: Vec<TriageItem> = triage_items(&state, &snap, &cwes)
        .into_iter()
        .filter(|i| band.is_none_or(|b| i.band == b))
        .collect();
    let total = items.len();
    let page: Vec<TriageItem> = items.into_iter().skip(offset).take(limit).collect();
    Ok(Json(json!({ "total": total, "offset": offset, "limit": limit, "items": page })))
}

async fn get_warning(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let snap = state.snapshot();
    let &index = state.base.open_index.get(&id).ok_or(Error::NotFound)?;
    let record = &state.base.open[index];
    let item = triage_items(&state, &snap, &[&record.cwe])
        .into_iter()
        .find(|i| i.warning_id == id)
        .ok_or(Error::NotFound)?;
    let contexts: Vec<Value> = state
        .base
        .embedder
        .top_contexts(&record.source, TOP_CONTEXTS)
        .unwrap_or_default()
        .into_iter()
        .map(|(c, alpha)| {
            json!({
                "left_terminal": c.left_terminal,
                "path": c.path_string(),
                "right_terminal": c.right_terminal,
                "left_pos": c.left_pos,
                "right_pos": c.right_pos,
                "alpha": alpha,
            })
        })
        .collect();
    let mut body = serde_json::to_value(item).expect("item serializes");
    body["source"] = json!(record.source);
    body["checker"] = json!(record.checker);
    body["contexts"] = json!(contexts);
    Ok(Json(body))
}

async fn post_verdict(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let &index = state.base.open_index.get(&id).ok_or(Error::NotFound)?;
    let body: Value = serde_json::from_slice(&body)
        .map_err(|e| Error::BadRequest(format!("body must be JSON: {e}")))?;
    let verdict_str = body.get("verdict").and_then(Value::as_str).unwrap_or_default();
    let verdict = Verdict::parse(verdict_str)
        .ok_or_else(|| Error::BadRequest(format!("invalid verdict {verdict_str:?}")))?;
    let user = body.get("user").and_then(Value::as_str).unwrap_or_default().trim();
    if user.is_empty() {
        return Err(Error::BadRequest("user is required".into()).into());
    }
    let cwe = state.base.open[index].cwe.clone();
    let (staged, triggered, appended) = {
        let _guard = state.cwe_locks[&cwe].lock().await;
        let version = state.snapshot().registry.models.get(&cwe).map_or(0, |m| m.version);
        let mut store = state.feedback.lock().expect("feedback lock");
        let outcome = store.record_feedback(
            &state.base.open,
            FeedbackEvent {
                warning_id: id.clone(),
                cwe: cwe.clone(),
                verdict,
                user: user.to_string(),
                timestamp: unix_ms(),
                model_version_at_verdict: version,
            },
        )?;
        let staged = store.staged(&cwe, version).len();
        (staged, version > 0 && staged >= state.settings.retrain_threshold, outcome == RecordOutcome::Appended)
    };
    if triggered && state.settings.auto_retrain {
        spawn_auto_retrain(&state, cwe);
    }
    Ok(Json(json!({ "staged": staged, "retrain_triggered": triggered, "appended": appended })))
}

fn spawn_auto_retrain(state: &SharedState, cwe: String) {
    if !state.retraining.lock().expect("retraining lock").insert(cwe.clone()) {
        return;
    }
    let state = Arc::clone(state);
    tokio::spawn(async move {
        match state.retrain(&cwe).await {
            Ok(version) => log::info!("{cwe}: automatic retrain published version {version}"),
            Err(e) => log::error!("{cwe}: automatic retrain failed: {e}"),
        }
        state.retraining.lock().expect("retraining lock").remove(&cwe);
    });
}

async fn post_retrain(State(state): State<SharedState>, Path(cwe): Path<String>) -> ApiResult<Json<Value>> {
    let version = state.retrain(&cwe).await?;
    Ok(Json(json!({ "cwe": cwe, "version": version })))
}

async fn get_metrics(State(state): State<SharedState>, Path(cwe): Path<String>) -> ApiResult<Json<Value>> {
    let snap = state.snapshot();
    let view = snap.views.get(&cwe).ok_or(Error::NotFound)?;
    let mut counts: BTreeMap<&str, usize> = Band::ALL.iter().map(|b| (b.as_str(), 0)).collect();
    for s in &view.scored {
        *counts.get_mut(s.band.as_str()).expect("every band counted") += 1;
    }
    Ok(Json(json!({
        "cwe": cwe,
        "model_version": snap.registry.get(&cwe)?.version,
        "report": view.metrics,
        "bands": counts,
        "n_open": view.scored.len(),
        "thresholds": view.thresholds,
    })))
}

async fn not_found() -> ApiError {
    ApiError(Error::NotFound)
}

pub fn router(state: SharedState) -> Router {
    let api = Router::new()
        .route("/api/cwes", get(list_cwes))
        .route("/api/warnings", get(list_warnings))
        .route("/api/warnings/{id}", get(get_warning))
        .route("/api/warnings/{id}/verdict", post(post_verdict))
        .route("/api/cwes/{cwe}/retrain", post(post_retrain))
        .route("/api/cwes/{cwe}/metrics", get(get_metrics));
    let api = match &state.settings.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).not_found_service(axum::routing::any(not_found))),
        None => api.fallback(not_found),
    };
    api.with_state(state)
}

/// Loads the data directory and serves until the process is stopped.
pub async fn serve(settings: Settings) -> Result<()> {
    let addr = format!("{}:{}", settings.host, settings.port);
    let state = tokio::task::spawn_blocking(move || AppState::load(settings))
        .await
        .map_err(|e| Error::Internal(e.to_string()))??;
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| Error::Internal(format!("cannot bind {addr}: {e}")))?;
    println!("listening on http://{addr}");
    axum::serve(listener, router(Arc::new(state)))
        .await
        .map_err(|e| Error::Internal(e.to_string()))
}
