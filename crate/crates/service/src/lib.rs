//! Translation over HTTP with live adapter mixtures.
//!
//! Many readers, one writer: translations clone an `Arc` of the current
//! composed snapshot, and mixture updates build a new snapshot and swap it in
//! whole. The service has no authentication and binds to loopback unless told
//! otherwise.

pub mod api;
mod config;
pub mod fixtures;
mod problem;
mod state;

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use tower_http::cors::{Any, CorsLayer};

pub use config::{AdapterSpec, ServeConfig};
pub use problem::{ApiError, Problem};
pub use state::{ServiceOptions, ServiceState, Snapshot};

use api::{AdapterInfo, Health, MixtureRequest, MixtureState, TranslateRequest, TranslateResponse};

type Shared = Arc<ServiceState>;

pub fn router(state: Shared) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/health", get(health))
        .route("/adapters", get(adapters))
        .route("/mixture", get(get_mixture).put(put_mixture))
        .route("/translate", post(translate))
        .layer(cors)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Shared,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn health(State(s): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        base_hash: s.base_hash().to_string(),
        counters: s.counters(),
    })
}

async fn adapters(State(s): State<Shared>) -> Json<Vec<AdapterInfo>> {
    Json(s.adapters())
}

async fn get_mixture(State(s): State<Shared>) -> Json<MixtureState> {
    Json(s.mixture())
}

async fn put_mixture(
    State(s): State<Shared>,
    body: Result<Json<MixtureRequest>, JsonRejection>,
) -> Result<Json<MixtureState>, ApiError> {
    let Json(req) = body?;
    let out = blocking(move || s.set_mixture(req.components)).await?;
    tracing::debug!(hash = %out.mixture_hash, active = %out.active_hash, "mixture updated");
    Ok(Json(out))
}

async fn translate(
    State(s): State<Shared>,
    body: Result<Json<TranslateRequest>, JsonRejection>,
) -> Result<Json<TranslateResponse>, ApiError> {
    let Json(req) = body?;
    blocking(move || s.translate(&req.text, req.mixture_override.as_deref())).await.map(Json)
}
