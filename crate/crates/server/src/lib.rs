//! HTTP/JSON control API over a [`RunManager`], with a server-sent event
//! stream per run.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use labloom::dsl::{parse_workflow, DataFormat};
use labloom::engine::{make_headless, ConfigPatch, EngineError, EngineEvent, RunManager, RunOptions};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    NotFound,
    Conflict,
    Invalid,
    Gone,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::Invalid => StatusCode::BAD_REQUEST,
            ErrorCode::Gone => StatusCode::GONE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
        }
    }
}

/// Store and I/O trouble is reported as a conflict with server state.
impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = match &e {
            EngineError::NotFound(_) => ErrorCode::NotFound,
            EngineError::Gone(_) => ErrorCode::Gone,
            EngineError::Validation(_) | EngineError::Plan(_) | EngineError::Invalid(_) => ErrorCode::Invalid,
            EngineError::Conflict(_) | EngineError::Integrity(_) | EngineError::Store(_) | EngineError::Io(_) => {
                ErrorCode::Conflict
            }
        };
        ApiError::new(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
struct AppState {
    manager: Arc<RunManager>,
}

/// Body of `POST /api/runs`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StartRun {
    /// Workflow document text.
    pub spec: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub run_id: Option<String>,
    /// Directory that relative paths in the spec resolve against.
    #[serde(default)]
    pub base_dir: Option<PathBuf>,
    #[serde(default)]
    pub headless: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub workflow: String,
    pub phase: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerBody {
    pub answer: Value,
}

#[derive(Debug, Clone, Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

pub fn router(manager: Arc<RunManager>) -> Router {
    Router::new()
        .route("/api/runs", get(list_runs).post(start_run))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/pause", post(pause))
        .route("/api/runs/{id}/resume", post(resume))
        .route("/api/runs/{id}/patches", post(patch))
        .route("/api/runs/{id}/interactions", get(interactions))
        .route("/api/runs/{id}/interactions/{rid}/answer", post(answer))
        .route("/api/runs/{id}/events", get(events))
        .route("/api/runs/{id}/artifacts/{node}/{iteration}/{*port}", get(artifact))
        .with_state(AppState { manager })
}

/// Serve the API on `listener` until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, manager: Arc<RunManager>) -> std::io::Result<()> {
    axum::serve(listener, router(manager)).await
}

/// Run a blocking manager call off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, EngineError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(ErrorCode::Conflict, format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

async fn list_runs(State(s): State<AppState>) -> Json<Vec<RunSummary>> {
    let runs = s
        .manager
        .run_ids()
        .into_iter()
        .filter_map(|id| s.manager.view(&id).ok())
        .map(|v| RunSummary {
            run_id: v.state.run_id.clone(),
            workflow: v.state.spec.name.clone(),
            phase: v.state.phase.as_str().to_string(),
            seed: v.state.seed,
        })
        .collect();
    Json(runs)
}

async fn start_run(State(s): State<AppState>, Json(body): Json<StartRun>) -> ApiResult<(StatusCode, Json<Value>)> {
    let spec = parse_workflow(&body.spec).map_err(|e| ApiError::new(ErrorCode::Invalid, e.to_string()))?;
    let spec = if body.headless {
        make_headless(&spec, s.manager.registry())
    } else {
        spec
    };
    let opts = RunOptions {
        run_id: body.run_id,
        seed: body.seed,
        base_dir: body.base_dir.unwrap_or_else(|| PathBuf::from(".")),
    };
    let m = Arc::clone(&s.manager);
    let id = blocking(move || m.start(spec, opts)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "run_id": id }))))
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let view = s.manager.view(&id)?;
    Ok(Json(serde_json::to_value(view).expect("views serialize")))
}

async fn pause(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let m = Arc::clone(&s.manager);
    let ck = blocking(move || m.pause(&id)).await?;
    Ok(Json(json!({ "phase": "paused", "checkpoint": ck })))
}

async fn resume(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let m = Arc::clone(&s.manager);
    blocking(move || m.resume(&id)).await?;
    Ok(Json(json!({ "phase": "running" })))
}

async fn patch(State(s): State<AppState>, Path(id): Path<String>, Json(p): Json<ConfigPatch>) -> ApiResult<Json<ConfigPatch>> {
    let m = Arc::clone(&s.manager);
    Ok(Json(blocking(move || m.patch_config(&id, p)).await?))
}

async fn interactions(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let view = s.manager.view(&id)?;
    Ok(Json(serde_json::to_value(&view.state.pending_interactions).expect("requests serialize")))
}

async fn answer(
    State(s): State<AppState>,
    Path((id, rid)): Path<(String, String)>,
    Json(body): Json<AnswerBody>,
) -> ApiResult<Json<Value>> {
    let m = Arc::clone(&s.manager);
    let r = rid.clone();
    blocking(move || m.answer(&id, &r, body.answer)).await?;
    Ok(Json(json!({ "request_id": rid, "status": "answered" })))
}

fn sse_event(ev: &EngineEvent) -> Event {
    Event::default()
        .id(ev.index.to_string())
        .event(ev.kind.name())
        .data(serde_json::to_string(ev).expect("events serialize"))
}

/// Events with index >= `since`, then live ones; ends after the terminal
/// event.
async fn events(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<Since>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let log = s.manager.events(&id)?;
    let rx = log.subscribe();
    let manager = Arc::clone(&s.manager);
    let stream = stream::unfold((log, rx, q.since, false), move |(log, mut rx, next, done)| {
        let manager = Arc::clone(&manager);
        let id = id.clone();
        async move {
            if done {
                return None;
            }
            loop {
                let batch = log.since(next);
                if !batch.is_empty() {
                    let next = next + batch.len() as u64;
                    let done = batch.iter().any(|e| e.kind.is_terminal());
                    let items: Vec<Result<Event, Infallible>> = batch.iter().map(|e| Ok(sse_event(e))).collect();
                    return Some((stream::iter(items), (log, rx, next, done)));
                }
                match tokio::time::timeout(Duration::from_millis(500), rx.changed()).await {
                    Ok(Ok(())) => {}
                    Ok(Err(_)) => return None,
                    Err(_) => {
                        // A worker stopped by an engine error emits no terminal event.
                        let stalled = manager.view(&id).map(|v| v.engine_error.is_some()).unwrap_or(true);
                        if stalled && log.len() <= next {
                            return None;
                        }
                    }
                }
            }
        }
    })
    .flatten();
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn content_type(format: DataFormat) -> &'static str {
    match format {
        DataFormat::Csv => "text/csv",
        DataFormat::Json => "application/json",
    }
}

async fn artifact(
    State(s): State<AppState>,
    Path((id, node, iteration, port)): Path<(String, String, String, String)>,
) -> ApiResult<Response> {
    let view = s.manager.view(&id)?;
    let rec = view
        .artifacts
        .iter()
        .find(|r| r.node_id == node && r.port == port && r.iteration.to_string() == iteration)
        .ok_or_else(|| ApiError::new(ErrorCode::NotFound, format!("no artifact {node}.{port} at {iteration}")))?;
    let (rec, bytes) = s.manager.artifact(&id, &rec.artifact_id)?;
    let mut headers = HeaderMap::new();
    let text = |s: &str| HeaderValue::from_str(s).expect("header-safe text");
    headers.insert(header::CONTENT_TYPE, text(content_type(rec.format)));
    headers.insert("x-artifact-id", text(&rec.artifact_id));
    headers.insert("x-artifact-kind", text(rec.kind.as_str()));
    headers.insert("x-artifact-format", text(rec.format.as_str()));
    let meta = serde_json::to_string(&rec).expect("records serialize");
    if let Ok(v) = HeaderValue::from_str(&meta) {
        headers.insert("x-artifact-record", v);
    }
    Ok((headers, bytes).into_response())
}
