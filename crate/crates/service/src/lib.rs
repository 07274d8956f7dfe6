//! HTTP facade over datasets, learned models and approximate queries.
//!
//! Endpoints: `POST/GET /datasets`, `POST/GET /models`, `GET /models/{id}`,
//! `POST /query`, `GET /health`.

pub mod error;
pub mod registry;
mod routes;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use thiserror::Error;

pub use error::ApiError;
pub use registry::{ModelStatus, Registry};
pub use routes::StrategyChoice;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub data_dir: Option<PathBuf>,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            data_dir: None,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceConfig {
    /// Reads `BIND`, `PORT`, `DATA_DIR` and `MAX_UPLOAD_BYTES`, falling back
    /// to the defaults for unset variables.
    pub fn from_env() -> Result<Self, ServiceError> {
        let mut c = ServiceConfig::default();
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if let Some(b) = var("BIND") {
            c.bind = b;
        }
        if let Some(p) = var("PORT") {
            c.port = p.parse().map_err(|_| ServiceError::Config(format!("PORT '{p}' is not a port number")))?;
        }
        if let Some(d) = var("DATA_DIR") {
            c.data_dir = Some(PathBuf::from(d));
        }
        if let Some(m) = var("MAX_UPLOAD_BYTES") {
            c.max_upload_bytes = m
                .parse()
                .map_err(|_| ServiceError::Config(format!("MAX_UPLOAD_BYTES '{m}' is not a byte count")))?;
        }
        Ok(c)
    }
}

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
}

/// The service's routes over `registry`.
pub fn router(registry: Arc<Registry>, max_upload_bytes: usize) -> Router {
    Router::new()
        .route("/health", get(routes::health))
        .route("/datasets", post(routes::create_dataset).get(routes::list_datasets))
        .route("/models", post(routes::create_model).get(routes::list_models))
        .route("/models/{id}", get(routes::get_model))
        .route("/query", post(routes::query))
        .layer(DefaultBodyLimit::max(max_upload_bytes))
        .with_state(AppState { registry })
}

/// Opens the registry described by `config` and serves until the process ends.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let registry = match &config.data_dir {
        Some(dir) => Registry::open(dir)?,
        None => Registry::in_memory(),
    };
    let addr: SocketAddr = format!("{}:{}", config.bind, config.port)
        .parse()
        .map_err(|e| ServiceError::Config(format!("bind address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(registry), config.max_upload_bytes)).await?;
    Ok(())
}

/// Runs [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(config: ServiceConfig) -> Result<(), ServiceError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(config))
}
