//! HTTP/JSON front end for live sessions.
//!
//! Each session runs on its own worker thread that owns the
//! [`SessionEngine`]. Request handlers send it commands over a channel and
//! await the reply; no tree is shared across threads. The worker samples
//! until the current block is done and then sleeps until a command arrives.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ibhc_core::{Tree, Triplet};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::dataset::Dataset;
use crate::formats::{write_jsonl, Answer};
use crate::session::{AnswerError, PendingQuery, SessionConfig, SessionEngine, SessionError, SessionState};

/// A dataset sessions can be created on, with its target tree if known.
pub struct DatasetEntry {
    pub data: Dataset,
    pub target: Option<Arc<Tree>>,
}

pub struct AppState {
    datasets: HashMap<String, Arc<DatasetEntry>>,
    sessions: Mutex<HashMap<String, mpsc::Sender<Command>>>,
    next_id: AtomicU64,
    log_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(datasets: HashMap<String, DatasetEntry>, log_dir: Option<PathBuf>) -> Self {
        Self {
            datasets: datasets.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            log_dir,
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/answer", post(post_answer))
        .route("/sessions/{id}/state", get(get_state))
        .with_state(state)
}

/// Error body `{code, message}` with its status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

impl From<AnswerError> for ApiError {
    fn from(e: AnswerError) -> Self {
        let (status, code) = match e {
            AnswerError::NoPendingQuery => (StatusCode::CONFLICT, "no_pending_query"),
            AnswerError::Unrealizable => (StatusCode::CONFLICT, "unrealizable"),
            AnswerError::OutsideSubset(_) => (StatusCode::UNPROCESSABLE_ENTITY, "outside_subset"),
            AnswerError::Duplicate => (StatusCode::UNPROCESSABLE_ENTITY, "duplicate"),
            AnswerError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
        };
        Self::new(status, code, e.to_string())
    }
}

enum Command {
    Query(oneshot::Sender<Result<PendingQuery, ApiError>>),
    Answer(Answer, oneshot::Sender<Result<Value, ApiError>>),
    State(oneshot::Sender<SessionState>),
}

struct Worker {
    engine: SessionEngine,
    log: Option<File>,
    failed: Option<String>,
}

impl Worker {
    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Query(reply) => {
                let r = match &self.failed {
                    Some(m) => Err(ApiError::internal(m.clone())),
                    None => self.engine.pose_query().map_err(|e| self.fail(e)),
                };
                let _ = reply.send(r);
            }
            Command::Answer(answer, reply) => {
                let r = self.engine.answer(answer).map_err(ApiError::from).and_then(|added| {
                    if let (Some(f), Some(rec)) = (&mut self.log, self.engine.log().last()) {
                        write_jsonl(f, [rec]).and_then(|_| f.flush()).map_err(|e| ApiError::internal(format!("session log: {e}")))?;
                    }
                    Ok(json!({
                        "added": added,
                        "constraints_count": self.engine.chain().constraints().len(),
                        "queries_answered": self.engine.log().len(),
                    }))
                });
                let _ = reply.send(r);
            }
            Command::State(reply) => {
                let _ = reply.send(self.engine.state());
            }
        }
    }

    fn fail(&mut self, e: SessionError) -> ApiError {
        let m = format!("sampler stopped: {e}");
        self.failed = Some(m.clone());
        ApiError::internal(m)
    }

    fn run(mut self, rx: mpsc::Receiver<Command>) {
        loop {
            let idle = self.failed.is_some() || self.engine.at_boundary() || self.engine.pending().is_some();
            let cmd = if idle {
                match rx.recv() {
                    Ok(c) => c,
                    Err(_) => return,
                }
            } else {
                match rx.try_recv() {
                    Ok(c) => c,
                    Err(mpsc::TryRecvError::Empty) => {
                        if let Err(e) = self.engine.step() {
                            self.fail(e);
                        }
                        continue;
                    }
                    Err(mpsc::TryRecvError::Disconnected) => return,
                }
            };
            self.handle(cmd);
        }
    }
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

fn parse_json(body: &Bytes) -> Result<Value, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("body is not JSON: {e}")))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let mut body = parse_json(&body)?;
    let obj = body
        .as_object_mut()
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "body must be a JSON object"))?;
    let name = match obj.remove("dataset") {
        Some(Value::String(s)) => s,
        _ => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", "\"dataset\" must name a dataset")),
    };
    let entry = app
        .datasets
        .get(&name)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_dataset", format!("no dataset named {name:?}")))?;
    let config: SessionConfig = serde_json::from_value(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string()))?;
    let id = format!("s{}", app.next_id.fetch_add(1, Ordering::Relaxed));
    let log = match &app.log_dir {
        Some(dir) => Some(open_log(dir, &id, &name, &config).map_err(|e| ApiError::internal(format!("session log: {e}")))?),
        None => None,
    };
    let cfg = config.clone();
    let (ready_tx, ready_rx) = oneshot::channel();
    let (tx, rx) = mpsc::channel();
    std::thread::Builder::new()
        .name(format!("session-{id}"))
        .spawn(move || match SessionEngine::new(&entry.data, entry.target.clone(), cfg) {
            Ok(engine) => {
                let _ = ready_tx.send(Ok(()));
                Worker { engine, log, failed: None }.run(rx);
            }
            Err(e) => {
                let _ = ready_tx.send(Err(e));
            }
        })
        .map_err(|e| ApiError::internal(e.to_string()))?;
    match ready_rx.await {
        Ok(Ok(())) => {}
        Ok(Err(SessionError::Config(m))) => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", m)),
        Ok(Err(e)) => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string())),
        Err(_) => return Err(ApiError::internal("session worker exited")),
    }
    app.sessions.lock().expect("session table").insert(id.clone(), tx);
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": id, "dataset": name, "status": "sampling", "config": config })),
    ))
}

/// Writes `{id}.config.json` and opens `{id}.jsonl` for the query log.
fn open_log(dir: &std::path::Path, id: &str, dataset: &str, config: &SessionConfig) -> std::io::Result<File> {
    std::fs::create_dir_all(dir)?;
    let mut head = serde_json::to_value(config).map_err(std::io::Error::other)?;
    head["dataset"] = dataset.into();
    std::fs::write(dir.join(format!("{id}.config.json")), format!("{head:#}\n"))?;
    OpenOptions::new().create(true).append(true).open(dir.join(format!("{id}.jsonl")))
}

async fn send<T>(app: &AppState, id: &str, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T, ApiError> {
    let tx = app
        .sessions
        .lock()
        .expect("session table")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}")))?;
    let (reply, rx) = oneshot::channel();
    tx.send(make(reply)).map_err(|_| ApiError::internal("session worker exited"))?;
    rx.await.map_err(|_| ApiError::internal("session worker exited"))
}

async fn get_query(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<PendingQuery>, ApiError> {
    send(&app, &id, Command::Query).await?.map(Json)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TripletBody {
    pair: [usize; 2],
    outgroup: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerBody {
    #[serde(default)]
    accept: Option<bool>,
    #[serde(default)]
    triplet: Option<TripletBody>,
}

fn parse_answer(body: &Bytes) -> Result<Answer, ApiError> {
    let invalid = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", m);
    let body: AnswerBody = serde_json::from_value(parse_json(body)?).map_err(|e| invalid(e.to_string()))?;
    match (body.accept, body.triplet) {
        (Some(true), None) => Ok(Answer::Accept),
        (None | Some(false), Some(t)) => Triplet::new(t.pair[0], t.pair[1], t.outgroup)
            .map(Answer::Triplet)
            .map_err(|e| invalid(e.to_string())),
        _ => Err(invalid("expected {\"accept\": true} or {\"triplet\": {\"pair\": [a, b], \"outgroup\": c}}".into())),
    }
}

async fn post_answer(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let answer = parse_answer(&body)?;
    send(&app, &id, |r| Command::Answer(answer, r)).await?.map(Json)
}

async fn get_state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    send(&app, &id, Command::State).await.map(Json)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
