//! Local HTTP + JSON service over calibration sessions.
//!
//! | route | body | reply |
//! |---|---|---|
//! | `POST /session` | [`OpenRequest`] | `201` `{ id, state }` |
//! | `GET /session/{id}/state` | | view payload |
//! | `PUT /session/{id}/offset` | `{ offset: [tx, ty, tz, roll, pitch, yaw] }` | `{ result, state }` |
//! | `POST /session/{id}/frame` | `{ delta }` or `{ index }` | `{ result, state }` |
//! | `POST /session/{id}/solve-all` | | `{ summary, state }` |
//! | `POST /session/{id}/profile` | `{ store }` (optional) | `{ profile, path }` |
//!
//! Errors are `{ "error": message }` with 400 (bad input), 404 (unknown session),
//! 409 (session busy with another request), 422 (solver failure) or 500.
//! A session serves one request at a time; a second concurrent request is rejected
//! rather than queued.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use dexforge_core::retarget::{IkConfig, RetargetResult};
use dexforge_core::session::{Offset, RenderCaps, Session, SessionError, SolveAllSummary, ViewPayload};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::Solver(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<Mutex<Session>>>>>,
    next_id: Arc<AtomicU64>,
    /// Where profiles go when a save request names no store.
    profile_store: PathBuf,
}

impl AppState {
    pub fn new(profile_store: impl Into<PathBuf>) -> Self {
        Self {
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
            profile_store: profile_store.into(),
        }
    }

    /// Handle to a live session, for embedding the service.
    pub fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.read().expect("session table poisoned").get(id).cloned()
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`")))
    }
}

/// Run `f` on the session off the async runtime. Fails with 409 if the session is
/// already handling a request.
async fn with_session<T, F>(state: &AppState, id: &str, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
{
    let guard = state.get(id)?.try_lock_owned().map_err(|_| {
        ApiError::new(StatusCode::CONFLICT, format!("session `{id}` is busy with another request"))
    })?;
    tokio::task::spawn_blocking(move || {
        let mut guard = guard;
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenRequest {
    pub recording: PathBuf,
    pub hand: PathBuf,
    #[serde(default)]
    pub profile: Option<PathBuf>,
    /// Defaults to the interactive solver budget.
    #[serde(default)]
    pub config: Option<IkConfig>,
    #[serde(default)]
    pub caps: Option<RenderCaps>,
}

#[derive(Serialize)]
struct Opened {
    id: String,
    state: ViewPayload,
}

async fn open(State(state): State<AppState>, Json(req): Json<OpenRequest>) -> Result<(StatusCode, Json<Opened>), ApiError> {
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let sid = id.clone();
    let session = tokio::task::spawn_blocking(move || -> Result<Session, ApiError> {
        let cfg = req.config.unwrap_or_else(IkConfig::interactive);
        let mut s = Session::open(sid, &req.recording, &req.hand, req.profile.as_deref(), cfg)?;
        if let Some(c) = req.caps {
            s.set_caps(c);
        }
        Ok(s)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let view = session.render_state()?;
    state
        .sessions
        .write()
        .expect("session table poisoned")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(Opened { id, state: view })))
}

async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<ViewPayload> {
    with_session(&state, &id, |s| Ok(s.render_state()?)).await.map(Json)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OffsetRequest {
    offset: Offset,
}

#[derive(Serialize)]
struct Solved {
    result: RetargetResult,
    state: ViewPayload,
}

async fn put_offset(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<OffsetRequest>,
) -> ApiResult<Solved> {
    with_session(&state, &id, move |s| {
        let result = s.set_offset(req.offset)?.clone();
        Ok(Solved {
            result,
            state: s.render_state()?,
        })
    })
    .await
    .map(Json)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRequest {
    #[serde(default)]
    delta: Option<i64>,
    #[serde(default)]
    index: Option<usize>,
}

async fn post_frame(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<FrameRequest>,
) -> ApiResult<Solved> {
    with_session(&state, &id, move |s| {
        let result = match (req.delta, req.index) {
            (Some(d), None) => s.step_frame(d)?.clone(),
            (None, Some(i)) => s.seek(i)?.clone(),
            _ => {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "give exactly one of `delta` or `index`",
                ))
            }
        };
        Ok(Solved {
            result,
            state: s.render_state()?,
        })
    })
    .await
    .map(Json)
}

#[derive(Serialize)]
struct SolvedAll {
    summary: SolveAllSummary,
    state: ViewPayload,
}

async fn post_solve_all(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<SolvedAll> {
    with_session(&state, &id, |s| {
        let summary = s.solve_all()?;
        Ok(SolvedAll {
            summary,
            state: s.render_state()?,
        })
    })
    .await
    .map(Json)
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ProfileRequest {
    #[serde(default)]
    store: Option<PathBuf>,
}

async fn post_profile(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<serde_json::Value> {
    // An empty body means "use the default store", whatever the content type says.
    let req: ProfileRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ProfileRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
    };
    let store = req.store.unwrap_or_else(|| state.profile_store.clone());
    with_session(&state, &id, move |s| {
        let (profile, path) = s.save_profile(&store)?;
        Ok(json!({ "profile": profile, "path": path }))
    })
    .await
    .map(Json)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(open))
        .route("/session/{id}/state", get(get_state))
        .route("/session/{id}/offset", put(put_offset))
        .route("/session/{id}/frame", post(post_frame))
        .route("/session/{id}/solve-all", post(post_solve_all))
        .route("/session/{id}/profile", post(post_profile))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serve on `addr` until the process is stopped.
pub async fn serve(addr: SocketAddr, profile_store: PathBuf) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(profile_store))).await
}
