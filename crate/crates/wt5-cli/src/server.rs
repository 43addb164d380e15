//! HTTP front end for rating sessions.
//!
//! Each session persists as an append-only JSONL event log
//! `<data-dir>/<session-id>.jsonl`; logs are replayed on startup. A mutation
//! is applied to a copy of the session, its new events are appended (and
//! synced) to the log, and only then does the copy replace the live state.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;
use wt5::rating::{append_event, read_events, NextBatch, RatingError, RatingItem, Session};

pub struct AppState {
    data_dir: PathBuf,
    sessions: Mutex<BTreeMap<String, Session>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    pending: Option<Vec<String>>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            pending: None,
        }
    }

    fn not_found(session: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{session}`"))
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<RatingError> for ApiError {
    fn from(e: RatingError) -> Self {
        let status = match &e {
            RatingError::UnknownBatch(_) => StatusCode::NOT_FOUND,
            RatingError::AlreadySubmitted(_) | RatingError::NotFinal(_) => StatusCode::CONFLICT,
            RatingError::WrongRater { .. } => StatusCode::FORBIDDEN,
            RatingError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let pending = match &e {
            RatingError::NotFinal(ids) => Some(ids.clone()),
            _ => None,
        };
        ApiError {
            status,
            message: e.to_string(),
            pending,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(pending) = self.pending {
            body["pending"] = json!(pending);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

impl AppState {
    /// Opens `data_dir`, replaying every session log found there.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, String> {
        let data_dir = data_dir.into();
        fs::create_dir_all(&data_dir).map_err(|e| format!("{}: {e}", data_dir.display()))?;
        let mut sessions = BTreeMap::new();
        let entries = fs::read_dir(&data_dir).map_err(|e| format!("{}: {e}", data_dir.display()))?;
        for entry in entries {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().is_some_and(|x| x == "jsonl") {
                let id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let events = read_events(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                let session = Session::replay(&events).map_err(|e| format!("{}: {e}", path.display()))?;
                sessions.insert(id, session);
            }
        }
        Ok(AppState {
            data_dir,
            sessions: Mutex::new(sessions),
        })
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.data_dir.join(format!("{id}.jsonl"))
    }

    /// Creates a session from items; attention checks are the items flagged
    /// `is_attention_check`.
    pub fn create_session(&self, items: Vec<RatingItem>, seed: u64) -> ApiResult<String> {
        let (checks, real): (Vec<_>, Vec<_>) = items.into_iter().partition(|i| i.is_attention_check);
        let session = Session::create(real, checks, seed)?;
        let mut sessions = self.sessions.lock().map_err(internal)?;
        let mut n = sessions.len() + 1;
        let id = loop {
            let id = format!("s{n:04}");
            if !sessions.contains_key(&id) && !self.log_path(&id).exists() {
                break id;
            }
            n += 1;
        };
        self.persist(&id, session.events())?;
        sessions.insert(id.clone(), session);
        Ok(id)
    }

    fn persist(&self, id: &str, events: &[wt5::rating::Event]) -> ApiResult<()> {
        let path = self.log_path(id);
        for event in events {
            append_event(&path, event).map_err(internal)?;
        }
        Ok(())
    }

    /// Runs `f` on a copy of the session and commits it once the new events
    /// are on disk.
    fn mutate<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, RatingError>) -> ApiResult<T> {
        let mut sessions = self.sessions.lock().map_err(internal)?;
        let live = sessions.get(id).ok_or_else(|| ApiError::not_found(id))?;
        let before = live.events().len();
        let mut next = live.clone();
        let out = f(&mut next)?;
        self.persist(id, &next.events()[before..])?;
        sessions.insert(id.to_string(), next);
        Ok(out)
    }

    fn read<T>(&self, id: &str, f: impl FnOnce(&Session) -> T) -> ApiResult<T> {
        let sessions = self.sessions.lock().map_err(internal)?;
        sessions.get(id).map(f).ok_or_else(|| ApiError::not_found(id))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions
            .lock()
            .map(|s| s.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn digest(&self, id: &str) -> Option<String> {
        self.read(id, Session::digest).ok()
    }
}

#[derive(Deserialize)]
struct CreateSession {
    items: Vec<RatingItem>,
    seed: u64,
}

#[derive(Deserialize)]
struct RaterQuery {
    rater: String,
}

#[derive(Deserialize)]
struct Submission {
    rater: String,
    verdicts: Vec<Option<bool>>,
}

#[derive(Serialize)]
struct SessionStatus {
    id: String,
    items: usize,
    batches: usize,
    complete: bool,
    digest: String,
}

async fn create_session(State(state): State<Arc<AppState>>, Json(body): Json<CreateSession>) -> ApiResult<Response> {
    let id = state.create_session(body.items, body.seed)?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.session_ids())
}

async fn session_status(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<SessionStatus>> {
    let status = state.read(&id, |s| SessionStatus {
        id: id.clone(),
        items: s.items().len(),
        batches: s.batches().len(),
        complete: s.is_complete(),
        digest: s.digest(),
    })?;
    Ok(Json(status))
}

async fn next_batch(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RaterQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let next = state.mutate(&id, |s| s.next_batch(&q.rater))?;
    Ok(Json(match next {
        NextBatch::Open(view) => json!({ "status": "open", "batch": view }),
        NextBatch::Drained => json!({ "status": "drained" }),
    }))
}

async fn submit_batch(
    State(state): State<Arc<AppState>>,
    UrlPath((id, batch)): UrlPath<(String, u64)>,
    Json(body): Json<Submission>,
) -> ApiResult<Json<serde_json::Value>> {
    let outcome = state.mutate(&id, |s| s.submit_batch(batch, &body.rater, &body.verdicts))?;
    Ok(Json(json!({ "batch_id": batch, "outcome": outcome })))
}

async fn report(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<wt5::rating::RatingReport>> {
    Ok(Json(state.read(&id, Session::aggregate)??))
}

const PLACEHOLDER: &str = "<!doctype html>\n<html><head><title>wt5 rating</title></head>\
<body><p>The rating UI is not installed. Start the server with <code>--ui-dir</code> \
pointing at the built UI.</p></body></html>\n";

/// API routes under `/sessions`; everything else is served from `ui_dir`
/// (or a placeholder page when there is none).
pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/batch", get(next_batch))
        .route("/sessions/{id}/batch/{batch}", post(submit_batch))
        .route("/sessions/{id}/report", get(report))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER) })),
    }
}

pub async fn serve(state: Arc<AppState>, ui_dir: Option<PathBuf>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, ui_dir.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
