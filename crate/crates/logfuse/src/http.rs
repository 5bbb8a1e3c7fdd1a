//! JSON API under `/api/v1`.
//!
//! Handlers hand the work to the blocking pool; the service does its own
//! locking. Errors come back as `{"error": <code>, "message": <text>}`.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use logfuse_core::feedback::Verdict;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::service::{AlertFilter, Service};

pub const PREFIX: &str = "/api/v1";

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::Busy => (StatusCode::CONFLICT, "busy"),
            Error::NoBundle => (StatusCode::CONFLICT, "no_bundle"),
            Error::BadRequest(_) | Error::Json { .. } | Error::Profile { .. } | Error::UnknownProfile(_) => {
                (StatusCode::BAD_REQUEST, "bad_request")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            log::error!("{e}");
        }
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(service: Arc<Service>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> crate::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&service)).await {
        Ok(r) => r.map(Json).map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: format!("handler panicked: {e}"),
        }),
    }
}

pub fn router(service: Arc<Service>) -> Router {
    let api = Router::new()
        .route("/ingest", post(ingest))
        .route("/batches", get(batches))
        .route("/batches/{id}/quarantine", get(quarantine))
        .route("/train", post(train))
        .route("/infer", post(infer))
        .route("/alerts", get(alerts))
        .route("/alerts/{id}", get(alert))
        .route("/alerts/{id}/feedback", post(feedback))
        .route("/retrain", post(retrain).get(retrain_status))
        .route("/models", get(models))
        .route("/models/{version}/activate", post(activate))
        .route("/runs/{dag}", get(runs))
        .fallback(|| async {
            ApiError {
                status: StatusCode::NOT_FOUND,
                code: "not_found",
                message: "no such endpoint".into(),
            }
        })
        .with_state(service);
    Router::new().nest(PREFIX, api)
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<Service>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on http://{}{PREFIX}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Deserialize)]
struct SourceQuery {
    source: Option<String>,
}

async fn ingest(
    State(svc): State<Arc<Service>>,
    query: Result<Query<SourceQuery>, QueryRejection>,
    body: String,
) -> Result<impl IntoResponse, ApiError> {
    let Query(q) = query?;
    let batch = blocking(svc, move |s| s.ingest(&body, q.source.as_deref())).await?;
    Ok((StatusCode::CREATED, batch))
}

async fn batches(State(svc): State<Arc<Service>>) -> ApiResult<Vec<crate::service::IngestBatch>> {
    blocking(svc, |s| Ok(s.batches())).await
}

async fn quarantine(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Vec<crate::parse::Quarantined>> {
    blocking(svc, move |s| s.quarantine(&id)).await
}

#[derive(Debug, Deserialize)]
struct BatchRef {
    batch_id: String,
    #[serde(default)]
    bundle_version: Option<u64>,
}

/// Trains a new model from a stored batch of labeled lines.
async fn train(
    State(svc): State<Arc<Service>>,
    body: Result<Json<BatchRef>, JsonRejection>,
) -> ApiResult<crate::service::TrainSummary> {
    let Json(req) = body?;
    blocking(svc, move |s| s.train(s.batch_lines(&req.batch_id)?)).await
}

async fn infer(
    State(svc): State<Arc<Service>>,
    body: Result<Json<BatchRef>, JsonRejection>,
) -> ApiResult<crate::service::InferReport> {
    let Json(req) = body?;
    blocking(svc, move |s| s.infer(&req.batch_id, req.bundle_version)).await
}

async fn alerts(
    State(svc): State<Arc<Service>>,
    query: Result<Query<AlertFilter>, QueryRejection>,
) -> ApiResult<crate::service::AlertPage> {
    let Query(filter) = query?;
    blocking(svc, move |s| s.list_alerts(&filter)).await
}

async fn alert(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<crate::service::AlertRecord> {
    blocking(svc, move |s| s.alert(&id)).await
}

#[derive(Debug, Deserialize, Serialize)]
pub struct FeedbackBody {
    pub verdict: Verdict,
    pub analyst: String,
}

async fn feedback(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackBody>, JsonRejection>,
) -> ApiResult<crate::service::AlertRecord> {
    let Json(body) = body?;
    blocking(svc, move |s| s.submit_feedback(&id, body.verdict, &body.analyst)).await
}

async fn retrain(State(svc): State<Arc<Service>>) -> ApiResult<crate::service::RetrainReport> {
    blocking(svc, |s| s.trigger_retrain()).await
}

async fn retrain_status(State(svc): State<Arc<Service>>) -> ApiResult<crate::service::RetrainStatus> {
    blocking(svc, |s| Ok(s.retrain_status())).await
}

async fn models(State(svc): State<Arc<Service>>) -> ApiResult<crate::service::ModelsView> {
    blocking(svc, |s| Ok(s.models())).await
}

async fn activate(State(svc): State<Arc<Service>>, Path(version): Path<String>) -> ApiResult<crate::service::ModelRecord> {
    // accept both "3" and "v3"
    let version: u64 = version
        .trim_start_matches('v')
        .parse()
        .map_err(|_| ApiError::bad_request(format!("bad model version `{version}`")))?;
    blocking(svc, move |s| s.activate(version)).await
}

async fn runs(State(svc): State<Arc<Service>>, Path(dag): Path<String>) -> ApiResult<Vec<crate::orchestrator::RunReport>> {
    blocking(svc, move |s| s.runs(&dag)).await
}
