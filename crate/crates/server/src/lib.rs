//! HTTP/JSON session service: hands out query batches, takes labels back,
//! and persists every session so a restart resumes where it stopped.

pub mod api;
pub mod error;
pub mod render;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;

use crate::api::{BrushResult, CreateSession, Created, PostBrush, PostLabels, Progress, Queries, API_VERSION};
use crate::error::ApiError;
use crate::session::Session;

pub struct AppState {
    root: PathBuf,
    /// Relative request paths resolve against this directory.
    base: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    /// Opens (or creates) a session store and reloads every session in it.
    /// Unfinished oracle sessions pick up where they stopped.
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Arc<AppState>> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&root)? {
            let dir = entry?.path();
            if !dir.join("meta.json").exists() {
                continue;
            }
            match Session::open(&dir) {
                Ok(s) => {
                    sessions.insert(s.id.clone(), s);
                }
                Err(e) => log::warn!("skipping session {}: {e}", dir.display()),
            }
        }
        let base = std::env::current_dir()?;
        let state = Arc::new(AppState { root, base, sessions: RwLock::new(sessions) });
        let resumable: Vec<Arc<Session>> =
            state.sessions.read().values().filter(|s| s.needs_oracle_run()).cloned().collect();
        for s in resumable {
            spawn_oracle(s);
        }
        Ok(state)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions.read().get(id).cloned().ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }
}

fn spawn_oracle(session: Arc<Session>) {
    std::thread::spawn(move || {
        if let Err(e) = session.run_oracle() {
            log::error!("oracle run of session {} failed: {e}", session.id);
        }
    });
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn create(State(app): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> Result<Json<Created>, ApiError> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let (root, base) = (app.root.clone(), app.base.clone());
    let session = blocking(move || Session::create(&root, id, req, &base)).await?;
    app.sessions.write().insert(session.id.clone(), session.clone());
    let status = session.snapshot().progress.status;
    if session.needs_oracle_run() {
        spawn_oracle(session.clone());
    }
    Ok(Json(Created { v: API_VERSION, id: session.id.clone(), phase: session.phase, mode: session.mode, status }))
}

async fn queries(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Queries>, ApiError> {
    let snap = app.session(&id)?.snapshot();
    match snap.queries.status {
        activeseg::active::LoopStatus::AwaitingLabels | activeseg::active::LoopStatus::Done => {
            Ok(Json(snap.queries.clone()))
        }
        status => Err(ApiError::Conflict(format!("session is {status:?}; no queries to show"))),
    }
}

async fn labels(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<PostLabels>,
) -> Result<Json<Progress>, ApiError> {
    let session = app.session(&id)?;
    Ok(Json(blocking(move || session.post_labels(&body)).await?))
}

async fn brush(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<PostBrush>,
) -> Result<Json<BrushResult>, ApiError> {
    let session = app.session(&id)?;
    Ok(Json(blocking(move || session.post_brush(&body)).await?))
}

async fn progress(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Progress>, ApiError> {
    Ok(Json(app.session(&id)?.snapshot().progress.clone()))
}

async fn export(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ApiError> {
    let snap = app.session(&id)?.snapshot();
    let model = snap.model.clone().ok_or_else(|| ApiError::Conflict("no model has been trained yet".into()))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], Bytes::from(model.as_ref().clone())))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/queries", get(queries))
        .route("/sessions/{id}/labels", post(labels))
        .route("/sessions/{id}/brush", post(brush))
        .route("/sessions/{id}/progress", get(progress))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
}

/// Serves the store at `root` until the process is stopped.
pub async fn serve(addr: SocketAddr, root: PathBuf) -> std::io::Result<()> {
    let state = AppState::open(root)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
