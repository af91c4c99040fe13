//! `/v1` routes over a shared [`Runtime`].

use std::fmt::Display;
use std::sync::Arc;

use arena_core::gateway::{
    ArenaApi, AuditTrail, ChallengeFilter, ChallengeSummary, ContextPayload, ModelCard, Receipt, RegisterModelRequest,
    SubmitRequest,
};
use arena_core::{ChallengeReport, GatewayError, LeaderboardEntry, Runtime, Scope, Window};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, MutexGuard};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const API_KEY_HEADER: &str = "x-api-key";

#[derive(Clone)]
pub struct AppState {
    runtime: Arc<Mutex<Runtime>>,
}

impl AppState {
    pub fn new(runtime: Runtime) -> Self {
        Self {
            runtime: Arc::new(Mutex::new(runtime)),
        }
    }

    pub fn runtime(&self) -> MutexGuard<'_, Runtime> {
        self.runtime.lock()
    }

    pub fn shared(&self) -> Arc<Mutex<Runtime>> {
        self.runtime.clone()
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid {field}: {message}")]
    BadRequest { field: &'static str, message: String },
}

impl ApiError {
    fn bad(field: &'static str, message: impl Display) -> Self {
        ApiError::BadRequest {
            field,
            message: message.to_string(),
        }
    }

    pub fn status(&self) -> StatusCode {
        let ApiError::Gateway(e) = self else {
            return StatusCode::BAD_REQUEST;
        };
        match e {
            GatewayError::Unauthorized => StatusCode::UNAUTHORIZED,
            GatewayError::OperatorOnly | GatewayError::Forbidden(_) => StatusCode::FORBIDDEN,
            GatewayError::RateLimited { .. } => StatusCode::TOO_MANY_REQUESTS,
            GatewayError::UnknownChallenge(_) | GatewayError::UnknownAlias { .. } | GatewayError::UnknownModel(_) => {
                StatusCode::NOT_FOUND
            }
            GatewayError::NotInRegistration { .. } | GatewayError::DeadlinePassed { .. } | GatewayError::NoScores(_) => {
                StatusCode::CONFLICT
            }
            GatewayError::WrongLength { .. } | GatewayError::NonFiniteValue { .. } | GatewayError::MissingDisclosure(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            GatewayError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Gateway(e) => e.code(),
            ApiError::BadRequest { .. } => "bad_request",
        }
    }
}

/// JSON error body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code().to_string(),
            message: self.to_string(),
        };
        let mut response = (self.status(), Json(body)).into_response();
        if let ApiError::Gateway(GatewayError::RateLimited { retry_after_secs }) = self {
            response
                .headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from(retry_after_secs.max(1)));
        }
        response
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad("body", e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Returned by `POST /v1/models`. The key is shown exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResponse {
    pub model_id: String,
    pub api_key: String,
    pub card: ModelCard,
}

#[derive(Debug, Default, Deserialize)]
struct ScopeQuery {
    state: Option<String>,
    window: Option<String>,
    domain: Option<String>,
    frequency: Option<String>,
    horizon: Option<String>,
}

impl ScopeQuery {
    fn scope(&self) -> Result<Scope, ApiError> {
        let nonempty = |v: &Option<String>| v.as_deref().map(str::trim).filter(|s| !s.is_empty()).map(str::to_string);
        Ok(Scope {
            domain: nonempty(&self.domain),
            frequency: nonempty(&self.frequency)
                .map(|f| f.parse().map_err(|e| ApiError::bad("frequency", e)))
                .transpose()?,
            horizon: nonempty(&self.horizon)
                .map(|h| h.parse().map_err(|e| ApiError::bad("horizon", e)))
                .transpose()?,
        })
    }
}

fn api_key(headers: &HeaderMap) -> &str {
    headers
        .get(API_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/models", post(register_model).get(list_models))
        .route("/v1/challenges", get(list_challenges))
        .route("/v1/challenges/{id}", get(challenge))
        .route("/v1/challenges/{id}/context/{alias}", get(context))
        .route("/v1/challenges/{id}/forecasts", post(submit_forecast))
        .route("/v1/challenges/{id}/scores", get(scores))
        .route("/v1/leaderboard", get(leaderboard))
        .route("/v1/audit/{id}", get(audit))
        .with_state(state)
}

async fn register_model(
    State(state): State<AppState>,
    body: Result<Json<RegisterModelRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<RegistrationResponse>), ApiError> {
    let Json(request) = body?;
    let reg = state.runtime().platform.register_model(request)?;
    let response = RegistrationResponse {
        model_id: reg.card.model_id.clone(),
        api_key: reg.api_key,
        card: reg.card,
    };
    Ok((StatusCode::CREATED, Json(response)))
}

async fn list_models(State(state): State<AppState>) -> ApiResult<Vec<ModelCard>> {
    Ok(Json(state.runtime().platform.models()))
}

async fn list_challenges(
    State(state): State<AppState>,
    Query(q): Query<ScopeQuery>,
) -> ApiResult<Vec<ChallengeSummary>> {
    let filter = ChallengeFilter {
        state: q
            .state
            .as_deref()
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| ApiError::bad("state", e)))
            .transpose()?,
        scope: q.scope()?,
    };
    Ok(Json(state.runtime().platform.list_challenges(&filter)?))
}

async fn challenge(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<ChallengeSummary> {
    let rt = state.runtime();
    let now = rt.platform.now();
    Ok(Json(rt.platform.challenge_at(&id, now)?))
}

async fn context(
    State(state): State<AppState>,
    Path((id, alias)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<ContextPayload> {
    Ok(Json(state.runtime().platform.get_context(api_key(&headers), &id, &alias)?))
}

async fn submit_forecast(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> ApiResult<Receipt> {
    let Json(request) = body?;
    Ok(Json(state.runtime().platform.submit_forecast(api_key(&headers), &id, request)?))
}

async fn scores(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<ChallengeReport> {
    Ok(Json(state.runtime().platform.scores(&id)?))
}

async fn leaderboard(State(state): State<AppState>, Query(q): Query<ScopeQuery>) -> ApiResult<Vec<LeaderboardEntry>> {
    let window: Window = q
        .window
        .as_deref()
        .ok_or_else(|| ApiError::bad("window", "required (7d, 30d, 90d or 365d)"))?
        .parse()
        .map_err(|e| ApiError::bad("window", e))?;
    let scope = q.scope()?;
    Ok(Json(state.runtime().platform.leaderboard(window, &scope)))
}

async fn audit(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<AuditTrail> {
    Ok(Json(state.runtime().platform.audit_trail(api_key(&headers), &id)?))
}
