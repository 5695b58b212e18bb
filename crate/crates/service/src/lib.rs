//! Axum service exposing the inference engine over HTTP/JSON.
//!
//! Routes:
//!
//! ```text
//! GET  /healthz           liveness
//! POST /v1/classify       per-image top-k classification under a schedule
//! POST /v1/entropy-map    per-patch entropy heatmap (PGM + sidecar)
//! POST /v1/sweep          criterion x keep-rate comparison grid
//! POST /v1/flops          analytic cost report
//! POST /v1/benchmark      wall-clock throughput (serialized per process)
//! ```
//!
//! Archives are loaded from server-side paths once and cached; models are
//! rebuilt per request from the cached archive. All numeric work runs on the
//! blocking pool.

mod handlers;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::{Mutex, RwLock};

use entroprune_api::ApiError;
use entroprune_core::weights::WeightArchive;
use entroprune_core::Error;

/// Shared service state: archive cache plus the benchmark serialization lock.
#[derive(Default)]
pub struct AppState {
    archives: RwLock<HashMap<PathBuf, Arc<WeightArchive>>>,
    bench_lock: Mutex<()>,
}

impl AppState {
    pub fn new() -> Arc<AppState> {
        Arc::new(AppState::default())
    }

    /// Cached archive lookup; loads and parses on first use.
    pub async fn archive(&self, path: &str) -> Result<Arc<WeightArchive>, ServiceError> {
        let key = Path::new(path).to_path_buf();
        if let Some(found) = self.archives.read().await.get(&key) {
            return Ok(found.clone());
        }
        let load_path = key.clone();
        let archive = tokio::task::spawn_blocking(move || WeightArchive::load(load_path))
            .await
            .map_err(ServiceError::join)??;
        let archive = Arc::new(archive);
        self.archives
            .write()
            .await
            .insert(key, archive.clone());
        Ok(archive)
    }

    pub(crate) async fn bench_guard(&self) -> tokio::sync::MutexGuard<'_, ()> {
        self.bench_lock.lock().await
    }
}

/// Error wrapper mapping engine error kinds onto HTTP statuses.
#[derive(Debug)]
pub struct ServiceError {
    pub status: StatusCode,
    pub kind: String,
    pub message: String,
}

impl ServiceError {
    fn join(err: tokio::task::JoinError) -> ServiceError {
        ServiceError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal".into(),
            message: format!("worker task failed: {err}"),
        }
    }
}

impl From<Error> for ServiceError {
    fn from(err: Error) -> ServiceError {
        let status = match &err {
            Error::Config(_)
            | Error::InvalidOrder(_)
            | Error::EmptyInput(_)
            | Error::Shape(_)
            | Error::Format(_)
            | Error::Parse(_) => StatusCode::BAD_REQUEST,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => StatusCode::NOT_FOUND,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Error::Integrity(_) | Error::DegenerateDistribution { .. } | Error::NonFinite(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
        };
        ServiceError {
            status,
            kind: err.kind().to_string(),
            message: err.to_string(),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(ApiError {
                kind: self.kind,
                error: self.message,
            }),
        )
            .into_response()
    }
}

pub fn app(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(handlers::healthz))
        .route("/v1/classify", post(handlers::classify))
        .route("/v1/entropy-map", post(handlers::entropy_map))
        .route("/v1/sweep", post(handlers::sweep))
        .route("/v1/flops", post(handlers::flops))
        .route("/v1/benchmark", post(handlers::benchmark))
        .layer(DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(state)
}

/// Bind on an ephemeral localhost port and serve in a background task.
/// Used by the CLI's embedded mode and by tests.
pub async fn bind_ephemeral(
    state: Arc<AppState>,
) -> std::io::Result<(std::net::SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await?;
    let addr = listener.local_addr()?;
    let router = app(state);
    let handle = tokio::spawn(async move {
        if let Err(err) = axum::serve(listener, router).await {
            tracing::error!("embedded server stopped: {err}");
        }
    });
    Ok((addr, handle))
}
