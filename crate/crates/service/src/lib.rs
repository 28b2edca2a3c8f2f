//! HTTP front end for counterfactual generation and subgroup analysis.
//!
//! One process serves one dataset/model pair. Generation runs as jobs on a
//! bounded worker pool; clients poll `GET /jobs/{id}`. Subgroups live in
//! per-session registries selected by the `x-session-id` header.

mod config;
mod error;
mod routes;
mod state;

pub use config::{ServiceConfig, LISTEN_ENV};
pub use error::ApiError;
pub use routes::router;
pub use state::{job_id, AppState, Job, Session, DEFAULT_SESSION, SESSION_HEADER};

/// Loads the configured dataset and model and serves until the process is
/// stopped.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let state = AppState::from_config(&config)?;
    let listener = tokio::net::TcpListener::bind(&config.listen).await?;
    log::info!(
        "serving {} ({} rows) on {} with {} workers",
        state.dataset.name,
        state.dataset.len(),
        listener.local_addr()?,
        state.pool().threads()
    );
    axum::serve(listener, router(state)).await?;
    Ok(())
}
