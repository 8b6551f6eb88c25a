//! HTTP control API.
//!
//! Routes:
//!
//! | method | path                  | body                         |
//! |--------|-----------------------|------------------------------|
//! | GET    | `/runs`               |                              |
//! | POST   | `/runs`               | `{config, pace?, start?}`    |
//! | POST   | `/runs/{id}/start`    |                              |
//! | POST   | `/runs/{id}/stop`     |                              |
//! | GET    | `/runs/{id}/status`   |                              |
//! | GET    | `/runs/{id}/stream`   | SSE, event `status`          |
//! | GET    | `/runs/{id}/metrics`  |                              |
//! | POST   | `/runs/{id}/export`   | `{directory}`                |
//! | POST   | `/topology/validate`  | topology spec                |
//! | POST   | `/calibrate`          | `{n, hashrate, target_interval_ms}` |
//!
//! Errors are `{"error": "..."}` with 400, 404 or 409.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chainbox_core::experiment::{calibrate_difficulty, Calibration};
use chainbox_core::metrics::MetricsFile;
use chainbox_core::topology::Violation;
use chainbox_core::{ExperimentConfig, Rational, TopologySpec};
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

use crate::registry::{RunError, RunOptions, RunRegistry, RunSummary};
use crate::snapshot::{RunStatus, StatusSnapshot};

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        let code = match &e {
            RunError::NotFound(_) => StatusCode::NOT_FOUND,
            RunError::Invalid(_) => StatusCode::BAD_REQUEST,
            RunError::Conflict(_) => StatusCode::CONFLICT,
            RunError::Archive(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize, Serialize)]
pub struct CreateRun {
    pub config: ExperimentConfig,
    #[serde(default)]
    pub pace: Option<f64>,
    /// Start immediately instead of waiting for `/start`.
    #[serde(default)]
    pub start: bool,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ExportRequest {
    pub directory: PathBuf,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ExportResponse {
    pub directory: PathBuf,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct CalibrateRequest {
    pub n: usize,
    pub hashrate: f64,
    pub target_interval_ms: u64,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct TopologyReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
    /// Exact, as `"p/q"`; absent unless valid.
    pub average_shortest_path: Option<String>,
    pub average_shortest_path_f64: Option<f64>,
}

pub fn router(registry: Arc<RunRegistry>) -> Router {
    Router::new()
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}", get(get_summary))
        .route("/runs/{id}/start", post(start_run))
        .route("/runs/{id}/stop", post(stop_run))
        .route("/runs/{id}/status", get(get_status))
        .route("/runs/{id}/stream", get(stream_status))
        .route("/runs/{id}/metrics", get(get_metrics))
        .route("/runs/{id}/export", post(export_run))
        .route("/topology/validate", post(validate_topology))
        .route("/calibrate", post(calibrate))
        .layer(CorsLayer::permissive())
        .with_state(registry)
}

/// Serves the API on `listener` until ctrl-c.
pub async fn serve(listener: TcpListener, registry: Arc<RunRegistry>) -> std::io::Result<()> {
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, RunError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(Into::into)
}

async fn list_runs(State(reg): State<Arc<RunRegistry>>) -> Json<Vec<RunSummary>> {
    Json(reg.list())
}

async fn create_run(
    State(reg): State<Arc<RunRegistry>>,
    Json(req): Json<CreateRun>,
) -> ApiResult<(StatusCode, Json<RunSummary>)> {
    let options = RunOptions { pace: req.pace, ..RunOptions::default() };
    let id = reg.create(req.config, options)?;
    let summary = if req.start { reg.start(&id)? } else { reg.summary(&id)? };
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn get_summary(State(reg): State<Arc<RunRegistry>>, Path(id): Path<String>) -> ApiResult<Json<RunSummary>> {
    Ok(Json(reg.summary(&id)?))
}

async fn start_run(State(reg): State<Arc<RunRegistry>>, Path(id): Path<String>) -> ApiResult<Json<RunSummary>> {
    Ok(Json(reg.start(&id)?))
}

async fn stop_run(State(reg): State<Arc<RunRegistry>>, Path(id): Path<String>) -> ApiResult<Json<RunSummary>> {
    Ok(Json(blocking(move || reg.stop(&id)).await?))
}

async fn get_status(State(reg): State<Arc<RunRegistry>>, Path(id): Path<String>) -> ApiResult<Json<StatusSnapshot>> {
    Ok(Json(reg.status(&id)?))
}

/// Pushes the current snapshot, then every new one, and ends after the
/// first terminal snapshot.
async fn stream_status(
    State(reg): State<Arc<RunRegistry>>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let rx = reg.subscribe(&id)?;
    let stream = futures::stream::unfold(Some((rx, true)), |state| async move {
        let (mut rx, first) = state?;
        if !first && rx.changed().await.is_err() {
            return None;
        }
        let snap = rx.borrow_and_update().clone();
        let data = serde_json::to_string(&snap).unwrap_or_default();
        let event = Event::default().event("status").id(snap.seq.to_string()).data(data);
        let next = if snap.status.is_terminal() { None } else { Some((rx, false)) };
        Some((Ok(event), next))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn get_metrics(State(reg): State<Arc<RunRegistry>>, Path(id): Path<String>) -> ApiResult<Response> {
    let summary = reg.summary(&id)?;
    if summary.status != RunStatus::Completed {
        let msg = format!("run {id} is {}; metrics exist only for completed runs", summary.status);
        return Err(ApiError(StatusCode::CONFLICT, msg));
    }
    let metrics = reg.metrics(&id)?.ok_or_else(|| ApiError(StatusCode::CONFLICT, "no metrics".into()))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], MetricsFile::new(metrics).to_json()).into_response())
}

async fn export_run(
    State(reg): State<Arc<RunRegistry>>,
    Path(id): Path<String>,
    Json(req): Json<ExportRequest>,
) -> ApiResult<Json<ExportResponse>> {
    let dir = req.directory.clone();
    let files = blocking(move || reg.export(&id, &dir)).await?;
    Ok(Json(ExportResponse { directory: req.directory, files }))
}

pub fn topology_report(spec: TopologySpec) -> TopologyReport {
    let spec = match spec.normalized() {
        Ok(s) => s,
        Err(e) => {
            let violations = vec![Violation::ShapeMismatch { detail: e.to_string() }];
            return TopologyReport {
                valid: false,
                violations,
                average_shortest_path: None,
                average_shortest_path_f64: None,
            };
        }
    };
    let violations = spec.validate();
    let valid = violations.is_empty();
    let exact = if valid { spec.average_shortest_path::<Rational>().ok() } else { None };
    TopologyReport {
        valid,
        violations,
        average_shortest_path: exact.map(|r| r.to_string()),
        average_shortest_path_f64: if valid { spec.average_shortest_path::<f64>().ok() } else { None },
    }
}

async fn validate_topology(Json(spec): Json<TopologySpec>) -> Json<TopologyReport> {
    Json(topology_report(spec))
}

async fn calibrate(Json(req): Json<CalibrateRequest>) -> ApiResult<Json<Calibration>> {
    calibrate_difficulty(req.n, req.hashrate, req.target_interval_ms)
        .map(Json)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))
}
