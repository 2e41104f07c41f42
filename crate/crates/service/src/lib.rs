//! HTTP+JSON front end for [`tripletfusion::annotation::AnnotationService`].
//!
//! | method | path | body / query | reply |
//! |---|---|---|---|
//! | POST | `/tasks` | [`CreateTask`] | `201 {task_id, pool_size}` |
//! | GET | `/tasks/{id}/next?annotator=ID` | | [`NextQuery`] |
//! | POST | `/tasks/{id}/responses` | [`SubmitResponse`] | [`Ack`] |
//! | POST | `/tasks/{id}/release` | [`ReleaseQuery`] | `204` |
//! | GET | `/tasks/{id}/export` | | JSON Lines labels |
//! | GET | `/tasks/{id}/export/summary` | | [`ExportSummary`] |
//! | GET | `/tasks/{id}/progress` | | [`Progress`] |
//! | GET | `/tasks/{id}/manifest` | | stimulus manifest |
//! | GET | `/assets/{asset_id}` | | `{asset_id, t, rgb}` |
//!
//! Errors come back as `{"error": kind, "message": ...}` with status 400
//! (invalid), 404 (not found), 409 (conflict, duplicate task), 410 (gone)
//! or 500.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tripletfusion::annotation::{
    AnnotationService, Choice, CreateTask, ServiceConfig, ServiceError,
};
pub use tripletfusion::annotation::{Ack, ExportSummary, NextQuery, Progress};
use tripletfusion::triplet::TripletQuery;
use tripletfusion::Error;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub annotator_id: String,
    pub query: TripletQuery,
    pub choice: Choice,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReleaseQuery {
    pub annotator_id: String,
    pub query: TripletQuery,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Created {
    pub task_id: String,
    pub pool_size: usize,
}

#[derive(Deserialize)]
struct NextParams {
    annotator: String,
}

/// Bind address, data directory and lease timeout, with environment overrides
/// `TRIPLET_BIND`, `TRIPLET_DATA_DIR` and `TRIPLET_LEASE_TIMEOUT_S`.
#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    pub lease_timeout_s: f64,
    pub grace_s: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: ([127, 0, 0, 1], 8080).into(),
            data_dir: PathBuf::from("annotation-data"),
            lease_timeout_s: 120.0,
            grace_s: 30.0,
        }
    }
}

impl ServeConfig {
    pub fn from_env() -> Result<Self, String> {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var("TRIPLET_BIND") {
            cfg.bind = v.parse().map_err(|e| format!("TRIPLET_BIND={v}: {e}"))?;
        }
        if let Ok(v) = std::env::var("TRIPLET_DATA_DIR") {
            cfg.data_dir = v.into();
        }
        if let Ok(v) = std::env::var("TRIPLET_LEASE_TIMEOUT_S") {
            cfg.lease_timeout_s = v
                .parse()
                .map_err(|e| format!("TRIPLET_LEASE_TIMEOUT_S={v}: {e}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lease_timeout_s > 0.0 && self.lease_timeout_s.is_finite()) {
            return Err(format!("lease timeout {} must be positive", self.lease_timeout_s));
        }
        if !(self.grace_s >= 0.0 && self.grace_s.is_finite()) {
            return Err(format!("grace period {} must be non-negative", self.grace_s));
        }
        Ok(())
    }

    pub fn service_config(&self) -> ServiceConfig {
        let mut cfg = ServiceConfig::new(&self.data_dir);
        cfg.lease_timeout_ms = (self.lease_timeout_s * 1000.0).round() as u64;
        cfg.grace_ms = (self.grace_s * 1000.0).round() as u64;
        cfg
    }
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
            ServiceError::DuplicateTask(_) => (StatusCode::CONFLICT, "duplicate-task"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ServiceError::Gone(_) => (StatusCode::GONE, "gone"),
            ServiceError::UnknownQuery(_) | ServiceError::Invalid(_) => {
                (StatusCode::BAD_REQUEST, "invalid")
            }
            ServiceError::Core(Error::BudgetExceedsUniverse { .. }) => {
                (StatusCode::BAD_REQUEST, "budget-exceeds-universe")
            }
            ServiceError::Core(Error::Io(_) | Error::Json(_)) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
            ServiceError::Core(Error::FusionConflict { .. }) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "disjointness-violated")
            }
            ServiceError::Core(_) => (StatusCode::BAD_REQUEST, "invalid"),
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        let body = serde_json::json!({ "error": kind, "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<AnnotationService>;

/// Runs a service call off the async executor; log writes may fsync.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Invalid(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

async fn create_task(
    State(svc): State<Shared>,
    Json(req): Json<CreateTask>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let created = blocking(move || {
        let task_id = svc.create_task(req)?;
        let pool_size = svc.progress(&task_id)?.total;
        Ok(Created { task_id, pool_size })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn next_query(
    State(svc): State<Shared>,
    Path(task_id): Path<String>,
    Query(params): Query<NextParams>,
) -> Result<Json<NextQuery>, ApiError> {
    Ok(Json(svc.next_query(&task_id, &params.annotator)?))
}

async fn submit(
    State(svc): State<Shared>,
    Path(task_id): Path<String>,
    Json(req): Json<SubmitResponse>,
) -> Result<Json<Ack>, ApiError> {
    let ack = blocking(move || {
        svc.submit_response(&task_id, &req.annotator_id, req.query, req.choice, req.latency_ms)
    })
    .await?;
    Ok(Json(ack))
}

async fn release(
    State(svc): State<Shared>,
    Path(task_id): Path<String>,
    Json(req): Json<ReleaseQuery>,
) -> Result<StatusCode, ApiError> {
    svc.release(&task_id, &req.annotator_id, req.query)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn export(State(svc): State<Shared>, Path(task_id): Path<String>) -> Result<Response, ApiError> {
    let export = svc.export_labels(&task_id)?;
    let body = tripletfusion::interchange::to_jsonl_string(&export.labels);
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn export_summary(
    State(svc): State<Shared>,
    Path(task_id): Path<String>,
) -> Result<Json<ExportSummary>, ApiError> {
    Ok(Json(svc.export_labels(&task_id)?.summary))
}

async fn progress(
    State(svc): State<Shared>,
    Path(task_id): Path<String>,
) -> Result<Json<Progress>, ApiError> {
    Ok(Json(svc.progress(&task_id)?))
}

async fn manifest(State(svc): State<Shared>, Path(task_id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(svc.manifest(&task_id)?).into_response())
}

async fn asset(State(svc): State<Shared>, Path(asset_id): Path<String>) -> Result<Response, ApiError> {
    let entry = svc
        .asset(&asset_id)
        .ok_or_else(|| ServiceError::NotFound(asset_id.clone()))?;
    Ok(Json(entry).into_response())
}

pub fn router(service: Arc<AnnotationService>) -> Router {
    Router::new()
        .route("/tasks", post(create_task))
        .route("/tasks/{id}/next", get(next_query))
        .route("/tasks/{id}/responses", post(submit))
        .route("/tasks/{id}/release", post(release))
        .route("/tasks/{id}/export", get(export))
        .route("/tasks/{id}/export/summary", get(export_summary))
        .route("/tasks/{id}/progress", get(progress))
        .route("/tasks/{id}/manifest", get(manifest))
        .route("/assets/{asset_id}", get(asset))
        .with_state(service)
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    service: Arc<AnnotationService>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Opens the data directory, replays the log and serves until Ctrl-C.
pub fn run(config: &ServeConfig) -> Result<(), Box<dyn std::error::Error>> {
    config.validate()?;
    let service = Arc::new(AnnotationService::open_system(config.service_config())?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(config.bind).await?;
        log::info!(
            "serving {} task(s) from {} on http://{}",
            service.task_ids().len(),
            config.data_dir.display(),
            listener.local_addr()?
        );
        serve_on(listener, service, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}
