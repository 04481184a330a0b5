//! HTTP/JSON sessions over the cherrypick analyses.
//!
//! A session is created once from hypotheses, a local test and a level, then
//! answers bound, curve, defining and estimate queries. Response bodies are
//! the same JSON documents the command-line tool prints.

mod error;
mod session;

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cherrypick::shortcuts::MethodPolicy;
use serde::Deserialize;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::ApiError;
pub use session::{HypothesisInput, Session, SessionRequest, SessionSummary, Snapshot};

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Where `POST /sessions/{id}/snapshot` writes; snapshots are refused when unset.
    pub snapshot_dir: Option<PathBuf>,
    /// Allowed CORS origins; `*` allows any.
    pub cors_origins: Vec<String>,
    pub policy: MethodPolicy,
}

#[derive(Debug)]
struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

type AppState = Arc<Inner>;

#[derive(Debug, Deserialize)]
struct SetQuery {
    set: Option<String>,
}

fn json_body(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn lookup(state: &Inner, id: &str) -> Result<Arc<Session>, ApiError> {
    state
        .sessions
        .read()
        .unwrap()
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("query task failed: {e}")))?
}

async fn healthz() -> &'static str {
    "ok"
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request: SessionRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid session body: {e}")))?;
    let policy = state.config.policy;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = {
        let id = id.clone();
        blocking(move || Ok(Session::new(id, request, policy)?)).await?
    };
    let summary = session.summary();
    log::info!("created session {id} (n = {}, {})", summary.n, summary.test);
    state.sessions.write().unwrap().insert(id, Arc::new(session));
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(lookup(&state, &id)?.summary()).into_response())
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match state.sessions.write().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(format!("unknown session `{id}`"))),
    }
}

async fn bound(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SetQuery>,
) -> Result<Response, ApiError> {
    let s = lookup(&state, &id)?;
    blocking(move || s.bound(q.set.as_deref())).await.map(json_body)
}

async fn estimate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SetQuery>,
) -> Result<Response, ApiError> {
    let s = lookup(&state, &id)?;
    blocking(move || s.estimate(q.set.as_deref())).await.map(json_body)
}

async fn curve(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = lookup(&state, &id)?;
    blocking(move || s.curve()).await.map(json_body)
}

async fn defining(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = lookup(&state, &id)?;
    blocking(move || s.defining()).await.map(json_body)
}

async fn snapshot(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = lookup(&state, &id)?;
    let dir = state
        .config
        .snapshot_dir
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "snapshots are disabled on this server"))?;
    let text = serde_json::to_string_pretty(&s.snapshot())
        .map_err(|e| ApiError::internal(e.to_string()))?;
    tokio::fs::create_dir_all(&dir)
        .await
        .map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("{id}.json"));
    tokio::fs::write(&path, text + "\n")
        .await
        .map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
    log::info!("wrote snapshot {}", path.display());
    let body = serde_json::json!({ "id": id, "path": path.display().to_string() });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(
            origins
                .iter()
                .filter_map(|o| HeaderValue::from_str(o).ok())
                .collect::<Vec<_>>(),
        )
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers([header::CONTENT_TYPE])
}

pub fn router(config: ServiceConfig) -> Router {
    let layer = cors(&config.cors_origins);
    let state = Arc::new(Inner {
        config,
        sessions: RwLock::new(HashMap::new()),
    });
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/bound", get(bound))
        .route("/sessions/{id}/curve", get(curve))
        .route("/sessions/{id}/defining", get(defining))
        .route("/sessions/{id}/estimate", get(estimate))
        .route("/sessions/{id}/snapshot", post(snapshot))
        .layer(layer)
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains open connections.
pub async fn serve(
    listener: TcpListener,
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(config))
        .with_graceful_shutdown(shutdown)
        .await
}
