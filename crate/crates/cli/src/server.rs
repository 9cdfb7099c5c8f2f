//! HTTP/JSON session service driving searches with a human oracle.
//!
//! Each session owns a [`SearchState`] and the batch currently on screen.
//! A selection message turns the witness's clicks into verdicts, commits
//! them and answers with the next batch.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use facesearch_core::faceio::encode_png;
use facesearch_core::search::{initial_batch, Batch, PoolEntry, TraceEntry, Verdict};
use facesearch_core::{EigenModel, MvnModel, SearchConfig, SearchState};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Everything a session needs besides its own state.
pub struct Engine {
    pub eigen: EigenModel,
    pub mvn: MvnModel,
    pub pool: Vec<PoolEntry>,
    pub config: SearchConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingSelection,
    Converged,
    Exhausted,
}

pub struct SessionRecord {
    pub id: String,
    pub state: SearchState,
    pending: Option<Batch>,
    issued: HashSet<String>,
    pub status: Status,
    pub created: u64,
    pub updated: u64,
    final_id: Option<String>,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    id: &'a str,
    status: Status,
    created: u64,
    updated: u64,
    pending: Vec<&'a str>,
    final_id: Option<&'a str>,
    state: &'a SearchState,
}

impl SessionRecord {
    fn snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            id: &self.id,
            status: self.status,
            created: self.created,
            updated: self.updated,
            pending: self
                .pending
                .iter()
                .flat_map(|b| b.candidates.iter().map(|c| c.id.as_str()))
                .collect(),
            final_id: self.final_id.as_deref(),
            state: &self.state,
        }
    }
}

type Session = Arc<Mutex<SessionRecord>>;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    sessions: Arc<RwLock<HashMap<String, Session>>>,
    snapshot_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(engine: Engine, snapshot_dir: Option<PathBuf>) -> Self {
        AppState {
            engine: Arc::new(engine),
            sessions: Arc::default(),
            snapshot_dir,
        }
    }

    /// Copy of a session's search state.
    pub fn search_state(&self, id: &str) -> Option<SearchState> {
        let session = self.sessions.read().unwrap().get(id).cloned()?;
        let state = session.lock().unwrap().state.clone();
        Some(state)
    }

    fn session(&self, id: &str) -> Result<Session, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    fn persist(&self, record: &SessionRecord) -> Result<(), ApiError> {
        let Some(dir) = &self.snapshot_dir else {
            return Ok(());
        };
        let text = serde_json::to_string(&record.snapshot()).map_err(ApiError::internal)?;
        std::fs::create_dir_all(dir).map_err(ApiError::internal)?;
        std::fs::write(dir.join(format!("{}.json", record.id)), text).map_err(ApiError::internal)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/selection", post(select))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message: message.into(),
        }
    }

    fn conflict(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::CONFLICT,
            message: message.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl From<facesearch_core::Error> for ApiError {
    fn from(e: facesearch_core::Error) -> Self {
        use facesearch_core::Error as E;
        match e {
            E::InvalidArgument(_) | E::DimensionMismatch { .. } => {
                ApiError::bad_request(e.to_string())
            }
            other => ApiError::internal(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({
            "protocol_version": PROTOCOL_VERSION,
            "error": self.message,
        });
        (self.status, Json(body)).into_response()
    }
}

fn check_version(v: Option<u32>) -> Result<(), ApiError> {
    match v {
        None | Some(PROTOCOL_VERSION) => Ok(()),
        Some(other) => Err(ApiError::bad_request(format!(
            "unsupported protocol_version {other}"
        ))),
    }
}

/// Per-session overrides of the server's search configuration.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub bandwidth: Option<f64>,
    pub zeta: Option<f64>,
    pub per_iter: Option<usize>,
    pub initial_pool: Option<usize>,
    pub max_iters: Option<usize>,
}

impl ConfigOverrides {
    fn apply(&self, base: &SearchConfig) -> SearchConfig {
        SearchConfig {
            bandwidth: self.bandwidth.unwrap_or(base.bandwidth),
            zeta: self.zeta.unwrap_or(base.zeta),
            per_iter: self.per_iter.unwrap_or(base.per_iter),
            initial_pool: self.initial_pool.unwrap_or(base.initial_pool),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            ..base.clone()
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub protocol_version: Option<u32>,
    #[serde(default)]
    pub config: ConfigOverrides,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRequest {
    pub protocol_version: Option<u32>,
    pub accepted_ids: Vec<String>,
    pub final_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub id: String,
    pub png_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultView {
    pub id: String,
    pub png_b64: String,
    pub iterations: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub protocol_version: u32,
    pub session_id: String,
    pub candidates: Vec<CandidateView>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionResponse {
    pub protocol_version: u32,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<CandidateView>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultView>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub protocol_version: u32,
    pub status: Status,
    pub t: usize,
    pub accepted_count: usize,
    pub trace: Vec<TraceEntry>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn views(batch: &Batch) -> Vec<CandidateView> {
    batch
        .candidates
        .iter()
        .map(|c| CandidateView {
            id: c.id.clone(),
            png_b64: STANDARD.encode(encode_png(&c.face)),
        })
        .collect()
}

fn issue(record: &mut SessionRecord, batch: Batch) -> Vec<CandidateView> {
    record
        .issued
        .extend(batch.candidates.iter().map(|c| c.id.clone()));
    let out = views(&batch);
    record.pending = Some(batch);
    out
}

async fn create_session(
    State(app): State<AppState>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<Json<CreateResponse>, ApiError> {
    let Json(req) = body?;
    check_version(req.protocol_version)?;
    let engine = &app.engine;
    let config = req.config.apply(&engine.config);
    if config.initial_pool > engine.pool.len() {
        return Err(ApiError::bad_request(format!(
            "initial_pool {} exceeds the {} faces available",
            config.initial_pool,
            engine.pool.len()
        )));
    }
    let seed = req.seed.unwrap_or_else(rand::random);
    let mut state = SearchState::new(config, seed)?;
    let batch = initial_batch(&mut state, &engine.pool, &engine.eigen)?;

    let mut sessions = app.sessions.write().unwrap();
    let id = loop {
        let id = format!("{:032x}", rand::random::<u128>());
        if !sessions.contains_key(&id) {
            break id;
        }
    };
    let t = now();
    let mut record = SessionRecord {
        id: id.clone(),
        state,
        pending: None,
        issued: HashSet::new(),
        status: Status::AwaitingSelection,
        created: t,
        updated: t,
        final_id: None,
    };
    let candidates = issue(&mut record, batch);
    app.persist(&record)?;
    sessions.insert(id.clone(), Arc::new(Mutex::new(record)));
    Ok(Json(CreateResponse {
        protocol_version: PROTOCOL_VERSION,
        session_id: id,
        candidates,
    }))
}

async fn get_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = app.session(&id)?;
    let record = session.lock().unwrap();
    Ok(Json(SessionView {
        protocol_version: PROTOCOL_VERSION,
        status: record.status,
        t: record.state.t(),
        accepted_count: record.state.accepted().len(),
        trace: record.state.trace().to_vec(),
    }))
}

async fn select(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SelectionRequest>, JsonRejection>,
) -> Result<Json<SelectionResponse>, ApiError> {
    let session = app.session(&id)?;
    let Json(req) = body?;
    check_version(req.protocol_version)?;
    let mut record = session.lock().unwrap();
    let response = apply_selection(&app.engine, &mut record, &req)?;
    record.updated = now();
    app.persist(&record)?;
    Ok(Json(response))
}

fn apply_selection(
    engine: &Engine,
    record: &mut SessionRecord,
    req: &SelectionRequest,
) -> Result<SelectionResponse, ApiError> {
    if record.status != Status::AwaitingSelection {
        return Err(ApiError::conflict(
            "session is no longer awaiting a selection",
        ));
    }
    let batch = record
        .pending
        .take()
        .expect("pending batch while awaiting selection");
    let verdicts = match verdicts_for(record, &batch, req) {
        Ok(v) => v,
        Err(e) => {
            record.pending = Some(batch);
            return Err(e);
        }
    };

    if batch.t == 0 {
        if !verdicts.iter().any(|v| v.accepted) {
            // nothing looked similar: show a fresh pool
            let next = initial_batch(&mut record.state, &engine.pool, &engine.eigen)?;
            return Ok(awaiting(issue(record, next)));
        }
        record.state.start(&batch, &verdicts, &engine.mvn)?;
    } else {
        record.state.commit(&batch, &verdicts, &engine.mvn)?;
    }

    if let Some(final_id) = &req.final_id {
        let face = &batch
            .candidates
            .iter()
            .find(|c| &c.id == final_id)
            .expect("validated")
            .face;
        record.state.declare_match();
        record.status = Status::Converged;
        record.final_id = Some(final_id.clone());
        return Ok(SelectionResponse {
            protocol_version: PROTOCOL_VERSION,
            status: Status::Converged,
            candidates: None,
            result: Some(ResultView {
                id: final_id.clone(),
                png_b64: STANDARD.encode(encode_png(face)),
                iterations: record.state.t(),
            }),
        });
    }

    if record.state.t() >= record.state.config().max_iters {
        record.status = Status::Exhausted;
        return Ok(SelectionResponse {
            protocol_version: PROTOCOL_VERSION,
            status: Status::Exhausted,
            candidates: None,
            result: None,
        });
    }
    let next = record.state.propose(&engine.eigen, &engine.mvn)?;
    Ok(awaiting(issue(record, next)))
}

fn awaiting(candidates: Vec<CandidateView>) -> SelectionResponse {
    SelectionResponse {
        protocol_version: PROTOCOL_VERSION,
        status: Status::AwaitingSelection,
        candidates: Some(candidates),
        result: None,
    }
}

/// Clicks to verdicts. Ids from an earlier batch are stale (conflict);
/// ids never issued, or repeated, are malformed.
fn verdicts_for(
    record: &SessionRecord,
    batch: &Batch,
    req: &SelectionRequest,
) -> Result<Vec<Verdict>, ApiError> {
    let current: HashSet<&str> = batch.candidates.iter().map(|c| c.id.as_str()).collect();
    let mut seen = HashSet::new();
    for id in req.accepted_ids.iter().chain(req.final_id.iter()) {
        if !current.contains(id.as_str()) {
            return Err(if record.issued.contains(id) {
                ApiError::conflict(format!("candidate {id} belongs to an earlier batch"))
            } else {
                ApiError::bad_request(format!("candidate {id} was never issued"))
            });
        }
    }
    for id in &req.accepted_ids {
        if !seen.insert(id.as_str()) {
            return Err(ApiError::bad_request(format!(
                "candidate {id} listed twice"
            )));
        }
    }
    // the declared match counts as similar
    if let Some(f) = &req.final_id {
        seen.insert(f.as_str());
    }
    Ok(batch
        .candidates
        .iter()
        .map(|c| Verdict::human(seen.contains(c.id.as_str())))
        .collect())
}

/// Bind and serve until interrupted.
pub async fn serve(app: AppState, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
