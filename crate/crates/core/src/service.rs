//! Read-only HTTP access to a run directory.
//!
//! `GET /batches?from=ITER` streams the export lines of every completed
//! iteration `>= ITER` in order; `GET /metrics` returns the metrics log.

use std::net::SocketAddr;
use std::path::PathBuf;

use axum::body::Body;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::StreamExt;
use serde::Deserialize;

use crate::engine::RunDir;

#[derive(Clone)]
struct AppState {
    dir: RunDir,
}

#[derive(Deserialize)]
struct BatchQuery {
    #[serde(default = "first_iter")]
    from: u64,
}

fn first_iter() -> u64 {
    1
}

pub fn router(root: PathBuf) -> Router {
    Router::new()
        .route("/batches", get(batches))
        .route("/metrics", get(metrics))
        .with_state(AppState {
            dir: RunDir::existing(&root),
        })
}

async fn batches(State(st): State<AppState>, Query(q): Query<BatchQuery>) -> Response {
    let completed = match st.dir.completed() {
        Ok(c) => c,
        Err(e) => return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    };
    let paths: Vec<PathBuf> = completed
        .into_iter()
        .filter(|&t| t >= q.from)
        .map(|t| st.dir.batch_path(t))
        .collect();
    let stream = futures::stream::iter(paths).then(|p| async move { tokio::fs::read(p).await });
    (
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(stream),
    )
        .into_response()
}

async fn metrics(State(st): State<AppState>) -> Response {
    match tokio::fs::read(st.dir.metrics_path()).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            ([(header::CONTENT_TYPE, "application/x-ndjson")], Vec::new()).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Serves `root` on `addr` until the process stops.
pub async fn serve(root: PathBuf, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, root = %root.display(), "serving run directory");
    axum::serve(listener, router(root)).await
}
