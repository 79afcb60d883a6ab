//! HTTP API over the train store.

use std::future::Future;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tracing::{info, warn};

use wagonline_core::summary::{MosaicManifest, TrainSummary};

use crate::publish::{now_ms, Publisher};
use crate::store::{CorrectionRequest, Ingested, StoreError, TrainStore};

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<TrainStore>>,
    crop_dir: Option<PathBuf>,
    token: Option<Arc<str>>,
    publisher: Option<Arc<Publisher>>,
}

impl AppState {
    pub fn new(store: TrainStore) -> Self {
        AppState { store: Arc::new(RwLock::new(store)), crop_dir: None, token: None, publisher: None }
    }

    pub fn with_crop_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.crop_dir = dir;
        self
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.map(Into::into);
        self
    }

    pub fn with_publisher(mut self, publisher: Option<Arc<Publisher>>) -> Self {
        self.publisher = publisher;
        self
    }

    pub fn store(&self) -> Arc<RwLock<TrainStore>> {
        Arc::clone(&self.store)
    }
}

pub struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1, "message": self.2 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, kind) = match &e {
            StoreError::NotFound(_) | StoreError::PositionNotFound { .. } => (StatusCode::NOT_FOUND, "NotFound"),
            StoreError::InvalidCode(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidCode"),
            StoreError::InvalidRequest(_) => (StatusCode::BAD_REQUEST, "InvalidRequest"),
            StoreError::DuplicateTrainId(_) => (StatusCode::CONFLICT, "DuplicateTrainId"),
            StoreError::InvalidSummary(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidSummary"),
            StoreError::Corrupt { .. } | StoreError::StorageFailure(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure")
            }
        };
        ApiError(status, kind, e.to_string())
    }
}

fn not_found(what: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "NotFound", format!("{what} not found"))
}

fn poisoned() -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure", "store lock poisoned".into())
}

/// Runs a store mutation on the blocking pool. The write lock makes it the
/// only writer.
async fn write<T: Send + 'static>(
    state: &AppState,
    op: impl FnOnce(&mut TrainStore) -> Result<T, StoreError> + Send + 'static,
) -> Result<T, ApiError> {
    let store = state.store();
    tokio::task::spawn_blocking(move || {
        let mut guard = store.write().map_err(|_| poisoned())?;
        op(&mut guard).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "StorageFailure", e.to_string()))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/trains", get(list_trains).post(ingest_train))
        .route("/api/trains/{id}", get(get_train))
        .route("/api/trains/{id}/mosaic", get(get_mosaic))
        .route("/api/trains/{id}/wagons/{pos}", patch(correct_wagon))
        .route("/media/{*crop_ref}", get(get_media))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return ApiError(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong API token".into())
                .into_response();
        }
    }
    next.run(request).await
}

async fn list_trains(State(state): State<AppState>) -> Result<Response, ApiError> {
    let list = state.store.read().map_err(|_| poisoned())?.list();
    Ok(Json(list).into_response())
}

async fn ingest_train(State(state): State<AppState>, Json(summary): Json<TrainSummary>) -> Result<Response, ApiError> {
    let train_id = summary.train_id.clone();
    let payload = summary.clone();
    let outcome = write(&state, move |store| store.ingest(summary)).await?;
    let status = match outcome {
        Ingested::Created => {
            info!(%train_id, "train ingested");
            if let Some(publisher) = state.publisher.clone() {
                tokio::spawn(async move {
                    if let Err(e) = publisher.publish(&payload).await {
                        warn!(error = %e, "publish deferred to retry loop");
                    }
                });
            }
            StatusCode::CREATED
        }
        Ingested::AlreadyStored => StatusCode::OK,
    };
    Ok((status, Json(json!({ "train_id": train_id }))).into_response())
}

async fn get_train(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let detail = state.store.read().map_err(|_| poisoned())?.detail(&id);
    detail.map(|d| Json(d).into_response()).ok_or_else(|| not_found(&format!("train {id}")))
}

async fn get_mosaic(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let manifest = state.store.read().map_err(|_| poisoned())?.get(&id).map(MosaicManifest::from_summary);
    manifest.map(|m| Json(m).into_response()).ok_or_else(|| not_found(&format!("train {id}")))
}

async fn correct_wagon(
    State(state): State<AppState>,
    Path((id, pos)): Path<(String, usize)>,
    Json(request): Json<CorrectionRequest>,
) -> Result<Response, ApiError> {
    let at = now_ms();
    let wagon = write(&state, move |store| store.correct(&id, pos, request, at)).await?;
    Ok(Json(wagon).into_response())
}

/// Resolves a crop reference inside the crop directory, refusing anything
/// that could step outside it.
fn media_path(root: &FsPath, crop_ref: &str) -> Option<PathBuf> {
    let rel = FsPath::new(crop_ref);
    if !crop_ref.is_empty() && rel.components().all(|c| matches!(c, Component::Normal(_))) {
        Some(root.join(rel))
    } else {
        None
    }
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn get_media(State(state): State<AppState>, Path(crop_ref): Path<String>) -> Result<Response, ApiError> {
    let root = state.crop_dir.as_deref().ok_or_else(|| not_found("media"))?;
    let path = media_path(root, &crop_ref).ok_or_else(|| not_found(&format!("media {crop_ref}")))?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found(&format!("media {crop_ref}")))?;
    let mut response = Response::new(Body::from(bytes));
    response.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type(&path)));
    Ok(response)
}

pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
