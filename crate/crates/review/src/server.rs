//! HTTP routes over a [`ReviewStore`].

use std::net::SocketAddr;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use handseg::io::Status;
use serde::Deserialize;
use tokio::net::TcpListener;

use crate::decisions::Verdict;
use crate::error::ReviewError;
use crate::store::{ImageKind, ReviewStore};

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<ReviewStore>>,
    static_dir: Option<Arc<PathBuf>>,
}

impl AppState {
    pub fn new(store: ReviewStore, static_dir: Option<PathBuf>) -> Self {
        AppState {
            store: Arc::new(RwLock::new(store)),
            static_dir: static_dir.map(Arc::new),
        }
    }
}

pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }

    fn not_found(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::NOT_FOUND, msg.into())
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let code = match e {
            ReviewError::UnknownFrame(_) => StatusCode::NOT_FOUND,
            ReviewError::BadVerdict(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn read(state: &AppState) -> std::sync::RwLockReadGuard<'_, ReviewStore> {
    state.store.read().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    offset: Option<usize>,
    limit: Option<usize>,
    status: Option<String>,
}

async fn list_frames(State(state): State<AppState>, Query(q): Query<ListQuery>) -> ApiResult<impl IntoResponse> {
    let status = match q.status.as_deref() {
        None | Some("all") => None,
        Some("pending") => Some(Status::Auto),
        Some(s) => Some(s.parse::<Status>().map_err(ApiError::bad_request)?),
    };
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    Ok(Json(read(&state).frames(q.offset.unwrap_or(0), limit, status)))
}

async fn frame(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(read(&state).frame(&id)?))
}

async fn image(State(state): State<AppState>, Path((id, file)): Path<(String, String)>) -> ApiResult<Response> {
    let kind = ImageKind::from_file_name(&file).ok_or_else(|| ApiError::not_found(format!("no image `{file}`")))?;
    let path = read(&state)
        .image_path(&id, kind)?
        .ok_or_else(|| ApiError::not_found(format!("frame `{id}` has no {file}")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, ReviewError::io(&path, e).to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    verdict: String,
    #[serde(default)]
    reviewer: String,
}

async fn decide(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let body: DecisionBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))?;
    let verdict: Verdict = body.verdict.parse()?;
    let store = state.store.clone();
    // The response is sent only after the log append has been synced.
    let summary = tokio::task::spawn_blocking(move || {
        let mut s = store.write().unwrap_or_else(|p| p.into_inner());
        s.record(&id, verdict, &body.reviewer)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(summary))
}

async fn stats(State(state): State<AppState>) -> impl IntoResponse {
    Json(read(&state).stats())
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("png") => "image/png",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

/// Serves the optional client bundle. Only plain relative components are
/// accepted.
async fn static_file(State(state): State<AppState>, uri: axum::http::Uri) -> ApiResult<Response> {
    let root = state.static_dir.as_ref().ok_or_else(|| ApiError::not_found("not found"))?;
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = FsPath::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(ApiError::not_found("not found"));
    }
    let path = root.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response()),
        Err(_) => Err(ApiError::not_found("not found")),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/frames", get(list_frames))
        .route("/api/frames/{id}", get(frame))
        .route("/api/frames/{id}/decision", post(decide))
        .route("/api/frames/{id}/{file}", get(image))
        .route("/api/stats", get(stats))
        .fallback(get(static_file))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve_on(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Opens the dataset directory and serves it on `addr` until Ctrl-C.
pub async fn serve(dataset_dir: PathBuf, addr: SocketAddr, static_dir: Option<PathBuf>) -> crate::Result<()> {
    let store = ReviewStore::open(dataset_dir)?;
    let listener = TcpListener::bind(addr).await.map_err(|e| ReviewError::io(addr.to_string(), e))?;
    log::info!("review server listening on {}", listener.local_addr().map_err(|e| ReviewError::io("listener", e))?);
    serve_on(listener, AppState::new(store, static_dir), async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| ReviewError::io(addr.to_string(), e))
}
