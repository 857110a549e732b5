//! REST surface of the prediction service.
//!
//! | method | path                              | body                    |
//! |--------|-----------------------------------|-------------------------|
//! | POST   | `/v1/events`                      | JSON array of events    |
//! | GET    | `/v1/predict/{family}/{anonymousId}` |                      |
//! | GET    | `/v1/models/{family}`             |                         |
//! | POST   | `/v1/models/{family}/activate`    | `{"versionId": "v0002"}` |
//!
//! Errors are `{"error": kind, "message": text, "retryable": bool}`.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clickpred::lifecycle::{Lifecycle, LifecycleError};
use clickpred::serving::store::Clock;
use clickpred::serving::{PredictionService, ServingError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub struct AppState<C: Clock> {
    pub service: PredictionService<C>,
    /// When present, activation goes through the archive so it persists.
    pub lifecycle: Option<Lifecycle>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    retryable: bool,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            kind,
            message: message.into(),
            retryable: false,
        }
    }
}

impl From<ServingError> for ApiError {
    fn from(e: ServingError) -> Self {
        let (status, kind) = match &e {
            ServingError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServingError::ArchiveUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "archive_unavailable"),
            ServingError::Checksum | ServingError::Format(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_model"),
            ServingError::Model(_) | ServingError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError {
            status,
            kind,
            retryable: e.is_retryable(),
            message: e.to_string(),
        }
    }
}

impl From<LifecycleError> for ApiError {
    fn from(e: LifecycleError) -> Self {
        match e {
            LifecycleError::Serving(s) => s.into(),
            LifecycleError::NotFound(m) => ApiError::new(StatusCode::NOT_FOUND, "not_found", m),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.kind, "message": self.message, "retryable": self.retryable});
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct IngestResponse {
    pub accepted: usize,
    pub rejected: usize,
    pub not_stored: usize,
    pub errors: Vec<IngestIssue>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct IngestIssue {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActivateRequest {
    pub version_id: String,
}

pub fn router<C: Clock + 'static>(state: Arc<AppState<C>>) -> Router {
    Router::new()
        .route("/v1/events", post(ingest::<C>))
        .route("/v1/predict/{family}/{anonymous_id}", get(predict::<C>))
        .route("/v1/models/{family}", get(model_info::<C>))
        .route("/v1/models/{family}/activate", post(activate::<C>))
        .with_state(state)
}

async fn ingest<C: Clock + 'static>(State(state): State<Arc<AppState<C>>>, Json(body): Json<Value>) -> Result<Json<IngestResponse>, ApiError> {
    let Value::Array(batch) = body else {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "body must be a JSON array of events"));
    };
    let ack = state.service.ingest(&batch)?;
    Ok(Json(IngestResponse {
        accepted: ack.accepted,
        rejected: ack.rejected,
        not_stored: ack.not_stored,
        errors: ack.errors.into_iter().map(|(index, message)| IngestIssue { index, message }).collect(),
    }))
}

async fn predict<C: Clock + 'static>(
    State(state): State<Arc<AppState<C>>>,
    Path((family, anonymous_id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    Ok(Json(state.service.handle_predict(&family, &anonymous_id)?).into_response())
}

async fn model_info<C: Clock + 'static>(State(state): State<Arc<AppState<C>>>, Path(family): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(state.service.model_info(&family)?).into_response())
}

async fn activate<C: Clock + 'static>(
    State(state): State<Arc<AppState<C>>>,
    Path(family): Path<String>,
    Json(req): Json<ActivateRequest>,
) -> Result<Response, ApiError> {
    match &state.lifecycle {
        Some(lc) => lc.rollback(&family, &req.version_id)?,
        None => {
            state.service.registry.activate_version(&family, &req.version_id)?;
        }
    }
    Ok(Json(state.service.model_info(&family)?).into_response())
}
