//! HTTP/JSON API over [`Conduct`].

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use bard_core::config::DesignConfig;
use bard_core::stage2::Stage2Doses;

use crate::error::ConductError;
use crate::service::{Conduct, CreateTrial};

/// Problem-details error body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Problem {
    #[serde(rename = "type")]
    pub kind: String,
    pub title: String,
    pub status: u16,
    pub detail: String,
}

pub struct ApiError(StatusCode, &'static str, String);

impl From<ConductError> for ApiError {
    fn from(e: ConductError) -> Self {
        let (status, kind) = match &e {
            ConductError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
            ConductError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ConductError::State(_) => (StatusCode::CONFLICT, "invalid-state"),
            ConductError::Quota(_) => (StatusCode::CONFLICT, "quota-exhausted"),
            ConductError::Validation(_) | ConductError::Engine(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            ConductError::Replay { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "replay"),
            ConductError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError(status, kind, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(e.status(), "bad-request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let ApiError(status, kind, detail) = self;
        let body = Problem {
            kind: format!("urn:bard:problem:{kind}"),
            title: status.canonical_reason().unwrap_or("error").to_string(),
            status: status.as_u16(),
            detail,
        };
        let mut resp = (status, Json(body)).into_response();
        resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/problem+json"));
        resp
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
struct App {
    conduct: Arc<Conduct>,
    token: Option<Arc<str>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EnrollRequest {
    /// Levels of the balanced covariates, in design order.
    pub covariates: Vec<usize>,
    #[serde(default = "yes")]
    pub eligible: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRequest {
    pub patient_id: u32,
    pub dlt: bool,
    #[serde(default)]
    pub response: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AdvanceRequest {
    /// Override of the stage-2 doses; `high` alone means a single-dose stage 2.
    #[serde(default)]
    pub low: Option<usize>,
    #[serde(default)]
    pub high: Option<usize>,
}

/// Run blocking work (file I/O, posterior grids) off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ConductError> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

async fn post_design(State(app): State<App>, body: Result<Json<DesignConfig>, JsonRejection>) -> ApiResult<impl IntoResponse> {
    let Json(design) = body?;
    let out = blocking(move || app.conduct.create_design(design)).await?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn get_boundaries(State(app): State<App>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || app.conduct.boundaries(&id)).await?))
}

async fn post_trial(State(app): State<App>, body: Result<Json<CreateTrial>, JsonRejection>) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let out = blocking(move || app.conduct.create_trial(req)).await?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn post_patient(
    State(app): State<App>,
    Path(id): Path<String>,
    body: Result<Json<EnrollRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let out = blocking(move || app.conduct.enroll(&id, &req.covariates, req.eligible)).await?;
    let status = if out.enrollment.enrolled { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(out)))
}

async fn post_outcome(
    State(app): State<App>,
    Path(id): Path<String>,
    body: Result<Json<OutcomeRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    Ok(Json(blocking(move || app.conduct.record_outcome(&id, req.patient_id, req.dlt, req.response)).await?))
}

async fn post_advance(
    State(app): State<App>,
    Path(id): Path<String>,
    body: Option<Json<AdvanceRequest>>,
) -> ApiResult<impl IntoResponse> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let doses = match (req.low, req.high) {
        (None, None) => None,
        (low, Some(high)) => Some(Stage2Doses { low, high }),
        (Some(_), None) => return Err(ConductError::Validation("an override needs a high dose".into()).into()),
    };
    Ok(Json(blocking(move || app.conduct.advance(&id, doses)).await?))
}

async fn get_state(State(app): State<App>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || app.conduct.state(&id)).await?))
}

async fn get_report(State(app): State<App>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || app.conduct.report(&id)).await?))
}

async fn get_events(State(app): State<App>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || app.conduct.events(&id)).await?))
}

async fn require_token(State(app): State<App>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**token);
        if !ok {
            return ApiError(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token".into()).into_response();
        }
    }
    next.run(req).await
}

/// The API router. With `token`, every request needs `Authorization: Bearer <token>`.
pub fn router(conduct: Arc<Conduct>, token: Option<String>) -> Router {
    let app = App { conduct, token: token.map(Into::into) };
    Router::new()
        .route("/designs", post(post_design))
        .route("/designs/{id}/boundaries", get(get_boundaries))
        .route("/trials", post(post_trial))
        .route("/trials/{id}/patients", post(post_patient))
        .route("/trials/{id}/outcomes", post(post_outcome))
        .route("/trials/{id}/advance", post(post_advance))
        .route("/trials/{id}/state", get(get_state))
        .route("/trials/{id}/report", get(get_report))
        .route("/trials/{id}/events", get(get_events))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token))
        .with_state(app)
}

/// Serve until the process ends.
pub async fn serve(conduct: Arc<Conduct>, token: Option<String>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(conduct, token)).await
}
