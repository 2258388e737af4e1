//! JSON-over-HTTP access to discovery sessions, with a crash-safe event log
//! per session.

pub mod app;
pub mod registry;
pub mod store;

pub use app::{router, ApiError, AppState, Phase, SessionState, API_VERSION};
pub use registry::{CorpusInfo, Registry};

pub const ADDR_ENV: &str = "RULEMINE_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

/// Bind address from `RULEMINE_ADDR`, or `127.0.0.1:8080`.
pub fn addr_from_env() -> String {
    std::env::var(ADDR_ENV).unwrap_or_else(|_| DEFAULT_ADDR.to_string())
}

/// Serves `state` until the process is stopped.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}
