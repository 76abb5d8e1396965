//! HTTP session service: live annotation runs where a person answers the
//! engine's label requests.
//!
//! Each session wraps one [`Engine`]; mutating calls on a session are
//! serialized by its lock and sessions are independent of one another. With a
//! data directory, datasets and per-session event logs are written to disk and
//! sessions are rebuilt on startup by replaying their human labels.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use sant_core::harness::{read_events_jsonl, write_events_jsonl, RunReport};
use sant_core::ledger::BudgetLedger;
use sant_core::triage::TriageScore;
use sant_core::{
    Dataset, Engine, Error, Event, ExperimentConfig, Label, LabeledDataset, Oracle, RecordCounts,
    RunStatus,
};
use serde::{Deserialize, Serialize};

pub mod api;

pub use api::*;

/// Whether the session has ground truth for live quality metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Ground truth present; metrics include quality. The person may still
    /// submit any label.
    Evaluation,
    /// No ground truth; metrics are limited to counts and losses.
    Production,
}

struct StoredDataset {
    dataset: Arc<Dataset>,
    oracle: Option<Oracle>,
}

struct Session {
    id: String,
    dataset_id: String,
    mode: Mode,
    engine: Engine<f64>,
    status_history: Vec<RunStatus>,
    /// Events already appended to the session log on disk.
    persisted: usize,
}

#[derive(Serialize, Deserialize)]
struct SessionMeta {
    id: String,
    dataset_id: String,
    mode: Mode,
    config: ExperimentConfig,
}

struct Inner {
    data_dir: Option<PathBuf>,
    datasets: RwLock<HashMap<String, Arc<StoredDataset>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_dataset: AtomicU64,
    next_session: AtomicU64,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn id_number(id: &str, prefix: char) -> Option<u64> {
    id.strip_prefix(prefix)?.parse().ok()
}

impl AppState {
    /// In-memory state with nothing persisted.
    pub fn in_memory() -> Self {
        Self::with_dir(None)
    }

    fn with_dir(data_dir: Option<PathBuf>) -> Self {
        AppState {
            inner: Arc::new(Inner {
                data_dir,
                datasets: RwLock::new(HashMap::new()),
                sessions: RwLock::new(HashMap::new()),
                next_dataset: AtomicU64::new(1),
                next_session: AtomicU64::new(1),
            }),
        }
    }

    /// Opens `data_dir`, reloading its datasets and replaying its sessions.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, Error> {
        let dir = data_dir.into();
        let state = Self::with_dir(Some(dir.clone()));
        for sub in ["datasets", "sessions"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut max_dataset = 0;
        for id in subdirs(&dir.join("datasets"))? {
            let ld = LabeledDataset::load(dir.join("datasets").join(&id))?;
            max_dataset = max_dataset.max(id_number(&id, 'd').unwrap_or(0));
            state.insert_dataset(id, ld);
        }
        let mut max_session = 0;
        for id in subdirs(&dir.join("sessions"))? {
            let sdir = dir.join("sessions").join(&id);
            let meta_path = sdir.join("session.json");
            let raw = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            let meta: SessionMeta = serde_json::from_slice(&raw)?;
            let stored = state
                .dataset(&meta.dataset_id)
                .ok_or_else(|| Error::Config(format!("session {id} refers to missing dataset {}", meta.dataset_id)))?;
            let events_path = sdir.join("events.jsonl");
            let events = if events_path.exists() {
                read_events_jsonl(&events_path)?
            } else {
                Vec::new()
            };
            let labels = Engine::<f64>::human_labels_from_events(&events);
            let engine = Engine::replay(meta.config.clone(), stored.dataset.clone(), labels)?;
            let mut session = Session {
                id: meta.id.clone(),
                dataset_id: meta.dataset_id,
                mode: meta.mode,
                status_history: vec![RunStatus::Running],
                engine,
                persisted: 0,
            };
            note_status(&mut session);
            state.rewrite_events(&session)?;
            session.persisted = session.engine.events().len();
            max_session = max_session.max(id_number(&id, 's').unwrap_or(0));
            state
                .inner
                .sessions
                .write()
                .expect("session map lock")
                .insert(meta.id, Arc::new(Mutex::new(session)));
        }
        state.inner.next_dataset.store(max_dataset + 1, Ordering::SeqCst);
        state.inner.next_session.store(max_session + 1, Ordering::SeqCst);
        Ok(state)
    }

    fn insert_dataset(&self, id: String, ld: LabeledDataset) {
        self.inner.datasets.write().expect("dataset map lock").insert(
            id,
            Arc::new(StoredDataset {
                dataset: Arc::new(ld.dataset),
                oracle: ld.oracle,
            }),
        );
    }

    fn dataset(&self, id: &str) -> Option<Arc<StoredDataset>> {
        self.inner.datasets.read().expect("dataset map lock").get(id).cloned()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
    }

    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.inner.data_dir.as_ref().map(|d| d.join("sessions").join(id))
    }

    /// Registers a dataset and returns its id.
    pub fn add_dataset(&self, ld: LabeledDataset) -> Result<String, Error> {
        let id = format!("d{}", self.inner.next_dataset.fetch_add(1, Ordering::SeqCst));
        if let Some(dir) = &self.inner.data_dir {
            ld.save_dir(dir.join("datasets").join(&id))?;
        }
        self.insert_dataset(id.clone(), ld);
        Ok(id)
    }

    fn create_session(&self, req: CreateSession) -> Result<(String, RunStatus), ApiError> {
        let stored = self
            .dataset(&req.dataset_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown dataset {:?}", req.dataset_id)))?;
        let full_truth = stored.oracle.as_ref().filter(|o| o.covers(&stored.dataset));
        let mode = match (req.mode, full_truth) {
            (Some(Mode::Evaluation), None) => {
                return Err(ApiError::unprocessable(
                    "evaluation mode needs a dataset with labels".into(),
                ))
            }
            (Some(m), _) => m,
            (None, Some(_)) => Mode::Evaluation,
            (None, None) => Mode::Production,
        };
        let config = req.config.unwrap_or_default();
        let engine = Engine::new(config.clone(), stored.dataset.clone()).map_err(ApiError::from)?;
        let id = format!("s{}", self.inner.next_session.fetch_add(1, Ordering::SeqCst));
        let session = Session {
            id: id.clone(),
            dataset_id: req.dataset_id.clone(),
            mode,
            engine,
            status_history: vec![RunStatus::Running],
            persisted: 0,
        };
        if let Some(dir) = self.session_dir(&id) {
            fs::create_dir_all(&dir).map_err(|e| ApiError::from(Error::io(&dir, e)))?;
            let meta = SessionMeta {
                id: id.clone(),
                dataset_id: req.dataset_id,
                mode,
                config,
            };
            let path = dir.join("session.json");
            let raw = serde_json::to_vec_pretty(&meta).map_err(Error::from)?;
            fs::write(&path, raw).map_err(|e| ApiError::from(Error::io(&path, e)))?;
        }
        let status = session.engine.status();
        self.inner
            .sessions
            .write()
            .expect("session map lock")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok((id, status))
    }

    fn rewrite_events(&self, session: &Session) -> Result<(), Error> {
        let Some(dir) = self.session_dir(&session.id) else {
            return Ok(());
        };
        let path = dir.join("events.jsonl");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        write_events_jsonl(session.engine.events(), &mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Appends events not yet on disk.
    fn persist(&self, session: &mut Session) -> Result<(), Error> {
        let events = session.engine.events();
        if session.persisted == events.len() {
            return Ok(());
        }
        if let Some(dir) = self.session_dir(&session.id) {
            let path = dir.join("events.jsonl");
            let file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            let mut w = std::io::BufWriter::new(file);
            write_events_jsonl(&events[session.persisted..], &mut w)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        session.persisted = events.len();
        Ok(())
    }
}

fn subdirs(dir: &Path) -> Result<Vec<String>, Error> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

fn note_status(session: &mut Session) {
    let status = session.engine.status();
    if session.status_history.last() != Some(&status) {
        session.status_history.push(status);
    }
}

/// Advances the engine to its next label request, recording the statuses it
/// passes through.
fn advance(session: &mut Session) -> Result<(), Error> {
    if session.engine.pending().is_some() || session.engine.is_done() {
        return Ok(());
    }
    note_status(session);
    session.engine.advance()?;
    note_status(session);
    Ok(())
}

fn gauge(ledger: &BudgetLedger) -> BudgetGauge {
    BudgetGauge {
        used: ledger.used(),
        total: ledger.total(),
        remaining: ledger.remaining(),
    }
}

fn session_view(session: &Session) -> SessionView {
    let engine = &session.engine;
    let processed = engine.records().count();
    SessionView {
        session_id: session.id.clone(),
        dataset_id: session.dataset_id.clone(),
        mode: session.mode,
        status: engine.status(),
        status_history: session.status_history.clone(),
        budget: gauge(engine.ledger()),
        counts: RecordCounts::tally(engine.records()),
        processed,
        dataset_size: engine.dataset().len(),
        pending_item_id: engine.pending_id().map(str::to_string),
        config: engine.config().clone(),
    }
}

fn suggestion(session: &Session) -> Result<Option<SuggestionPayload>, Error> {
    let engine = &session.engine;
    let Some(p) = engine.pending() else {
        return Ok(None);
    };
    let item = engine.dataset().item(p.index);
    let pred = engine.predict(p.index)?;
    let top: Vec<ClassProbability> = pred
        .top_k(SUGGESTION_ENTRIES.min(pred.num_classes()))
        .into_iter()
        .map(|class| ClassProbability {
            class,
            probability: pred.probs[class],
        })
        .collect();
    Ok(Some(SuggestionPayload {
        item_id: item.id.clone(),
        text: item.display_payload.clone(),
        features: item.features.clone(),
        position: p.position,
        phase: p.phase,
        suggestion: top,
        multilabel: pred.multilabel,
        scores: p.score.map(TriageScore::to_f64),
        budget: gauge(engine.ledger()),
    }))
}

const SUGGESTION_ENTRIES: usize = 5;

async fn upload_dataset(
    State(state): State<AppState>,
    Query(q): Query<DatasetQuery>,
    body: String,
) -> Result<(StatusCode, Json<DatasetInfo>), ApiError> {
    let ld = match q.task {
        Some(kind) => {
            let classes = q.num_classes.unwrap_or(2);
            sant_core::dataset::parse_jsonl_as(body.as_bytes(), kind, classes)?
        }
        None => sant_core::dataset::parse_jsonl(body.as_bytes(), None)?,
    };
    let info = DatasetInfo {
        dataset_id: String::new(),
        size: ld.dataset.len(),
        task: ld.dataset.task,
        labeled: ld.oracle.as_ref().is_some_and(|o| o.covers(&ld.dataset)),
    };
    let id = state.add_dataset(ld)?;
    Ok((
        StatusCode::CREATED,
        Json(DatasetInfo {
            dataset_id: id,
            ..info
        }),
    ))
}

async fn get_dataset(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<DatasetInfo>, ApiError> {
    let stored = state
        .dataset(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown dataset {id:?}")))?;
    Ok(Json(DatasetInfo {
        dataset_id: id,
        size: stored.dataset.len(),
        task: stored.dataset.task,
        labeled: stored.oracle.as_ref().is_some_and(|o| o.covers(&stored.dataset)),
    }))
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let (session_id, status) = state.create_session(req)?;
    Ok((StatusCode::CREATED, Json(CreatedSession { session_id, status })))
}

async fn get_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id)?;
    let guard = session.lock().expect("session lock");
    Ok(Json(session_view(&guard)))
}

async fn next_item(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<NextItem>, ApiError> {
    let session = state.session(&id)?;
    let mut guard = session.lock().expect("session lock");
    advance(&mut guard)?;
    state.persist(&mut guard)?;
    Ok(Json(NextItem {
        status: guard.engine.status(),
        item: suggestion(&guard)?,
        budget: gauge(guard.engine.ledger()),
    }))
}

async fn submit_label(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SubmitLabel>,
) -> Result<Json<LabelAck>, ApiError> {
    let session = state.session(&id)?;
    let mut guard = session.lock().expect("session lock");
    advance(&mut guard)?;
    guard.engine.submit(&req.item_id, req.label)?;
    note_status(&mut guard);
    let result = guard.engine.advance().map(|_| ());
    note_status(&mut guard);
    state.persist(&mut guard)?;
    result?;
    let next_item_id = guard.engine.pending_id().map(str::to_string);
    Ok(Json(LabelAck {
        accepted: true,
        item_id: req.item_id,
        budget: gauge(guard.engine.ledger()),
        status: guard.engine.status(),
        next_item_id,
    }))
}

async fn session_metrics(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Metrics>, ApiError> {
    let session = state.session(&id)?;
    let guard = session.lock().expect("session lock");
    Ok(Json(metrics(&state, &guard)?))
}

fn session_report(state: &AppState, session: &Session) -> Result<RunReport, Error> {
    let oracle = match session.mode {
        Mode::Evaluation => state
            .dataset(&session.dataset_id)
            .and_then(|d| d.oracle.clone()),
        Mode::Production => None,
    };
    RunReport::from_engine(&session.engine, oracle.as_ref())
}

fn metrics(state: &AppState, session: &Session) -> Result<Metrics, Error> {
    let report = session_report(state, session)?;
    Ok(Metrics {
        status: session.engine.status(),
        mode: session.mode,
        processed: report.records.len(),
        counts: report.counts,
        budget: gauge(session.engine.ledger()),
        quality_overall: report.quality_overall,
        quality_model_annotated: report.quality_model_annotated,
        n_model_correct: report.n_model_correct,
        terminal: report.terminal,
        loss_trace: report.loss_trace,
    })
}

async fn get_report(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<RunReport>, ApiError> {
    let session = state.session(&id)?;
    let guard = session.lock().expect("session lock");
    Ok(Json(session_report(&state, &guard)?))
}

async fn session_events(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Json<Vec<Event>>, ApiError> {
    let session = state.session(&id)?;
    let guard = session.lock().expect("session lock");
    let events = guard.engine.events();
    let from = q.from.unwrap_or(0).min(events.len());
    Ok(Json(events[from..].to_vec()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", post(upload_dataset))
        .route("/datasets/{id}", get(get_dataset))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/metrics", get(session_metrics))
        .route("/sessions/{id}/events", get(session_events))
        .route("/sessions/{id}/report", get(get_report))
        .with_state(state)
}

/// Serves the API on `addr` until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

/// Error body: `{"error": code, "message": ..., "expected": ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: String) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: code.to_string(),
                message,
                expected: None,
            },
        }
    }

    fn not_found(message: String) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn unprocessable(message: String) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::WrongItem { expected, .. } => {
                let mut err = Self::new(StatusCode::CONFLICT, "wrong_item", message);
                err.body.expected = expected;
                err
            }
            Error::BudgetExhausted { .. } => Self::new(StatusCode::CONFLICT, "budget_exhausted", message),
            Error::UnknownItem(_) => Self::new(StatusCode::NOT_FOUND, "not_found", message),
            Error::InvalidLabel(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_label", message),
            Error::Config(_) | Error::NonPositiveTemperature(_) | Error::InvalidSpec(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", message)
            }
            Error::Parse { .. } | Error::RowDimension { .. } | Error::DuplicateId(_) | Error::DimensionMismatch { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset", message)
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Label from the UI; `label` is a class index or a list of tags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitLabel {
    pub item_id: String,
    pub label: Label,
}
