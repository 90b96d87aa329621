//! Axum routes over [`App`].

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::api::*;
use crate::app::{App, AppError};
use crate::survey::Rounding;

/// Bodies beyond this are refused before parsing; the submission size
/// limit itself is checked on the decoded files.
const BODY_LIMIT: usize = 8 << 20;

pub struct ApiError(AppError);

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            AppError::Unauthorized => StatusCode::UNAUTHORIZED,
            AppError::NotFound(_) => StatusCode::NOT_FOUND,
            AppError::Locked => StatusCode::LOCKED,
            AppError::BadRequest(_) => StatusCode::BAD_REQUEST,
            AppError::Conflict(_) => StatusCode::CONFLICT,
            AppError::TooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            AppError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            AppError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %self.0, "request failed");
        }
        let body = ErrorBody {
            error: self.0.code().into(),
            message: self.0.to_string(),
        };
        let mut response = (status, axum::Json(body)).into_response();
        if status == StatusCode::UNAUTHORIZED {
            response
                .headers_mut()
                .insert(header::WWW_AUTHENTICATE, "Bearer".parse().expect("static header"));
        }
        response
    }
}

/// JSON body whose rejections use the API error shape.
pub struct Json<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Json<T> {
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Json(v)),
            Err(JsonRejection::BytesRejection(e)) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => {
                Err(AppError::TooLarge(e.body_text()).into())
            }
            Err(e) => Err(AppError::BadRequest(e.body_text()).into()),
        }
    }
}

impl<T: Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

type Shared = State<Arc<App>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
        .filter(|t| !t.is_empty())
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/me", get(me))
        .route("/api/teams", post(register_team))
        .route("/api/challenges", get(list_challenges))
        .route("/api/challenges/{id}", get(get_challenge))
        .route("/api/challenges/{id}/answer", post(answer))
        .route("/api/flags", post(submit_flag))
        .route("/api/submissions", post(submit_code))
        .route("/api/submissions/{id}", get(get_submission))
        .route("/api/hints/{id}/feedback", post(hint_feedback))
        .route("/api/scoreboard", get(scoreboard))
        .route("/api/clock", get(clock))
        .route("/api/survey", post(submit_survey))
        .route("/api/survey/aggregate", get(survey_aggregate))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(app)
}

async fn health(State(app): Shared) -> Json<Health> {
    Json(app.health())
}

async fn me(State(app): Shared, headers: HeaderMap) -> ApiResult<Me> {
    Ok(Json(app.me(bearer(&headers))?))
}

async fn register_team(
    State(app): Shared,
    headers: HeaderMap,
    Json(req): Json<RegisterTeam>,
) -> Result<(StatusCode, Json<TeamRegistration>), ApiError> {
    let reg = app.register_team(bearer(&headers), req)?;
    Ok((StatusCode::CREATED, Json(reg)))
}

async fn list_challenges(State(app): Shared, headers: HeaderMap) -> ApiResult<Vec<ChallengeSummary>> {
    Ok(Json(app.challenges(bearer(&headers))?))
}

async fn get_challenge(State(app): Shared, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<ChallengeView> {
    Ok(Json(app.challenge(bearer(&headers), &id)?))
}

async fn answer(
    State(app): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<AnswerRequest>,
) -> ApiResult<AnswerResult> {
    Ok(Json(app.answer(bearer(&headers), &id, req)?))
}

async fn submit_flag(
    State(app): Shared,
    headers: HeaderMap,
    Json(req): Json<FlagRequest>,
) -> ApiResult<csc_core::FlagOutcome> {
    Ok(Json(app.submit_flag(bearer(&headers), req)?))
}

async fn submit_code(
    State(app): Shared,
    headers: HeaderMap,
    Json(req): Json<SubmitCode>,
) -> Result<(StatusCode, Json<SubmissionAccepted>), ApiError> {
    let accepted = app.submit_code(bearer(&headers), req)?;
    let status = if accepted.duplicate {
        StatusCode::OK
    } else {
        StatusCode::ACCEPTED
    };
    Ok((status, Json(accepted)))
}

fn numeric_id(what: &str, raw: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| AppError::NotFound(format!("{what} {raw}")).into())
}

async fn get_submission(State(app): Shared, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<SubmissionView> {
    let id = numeric_id("submission", &id)?;
    Ok(Json(app.submission(bearer(&headers), id)?))
}

async fn hint_feedback(
    State(app): Shared,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<FeedbackRequest>,
) -> Result<StatusCode, ApiError> {
    let id = numeric_id("hint", &id)?;
    app.hint_feedback(bearer(&headers), id, req)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn scoreboard(State(app): Shared) -> Json<ScoreboardView> {
    Json(app.scoreboard())
}

async fn clock(State(app): Shared) -> Json<ClockView> {
    Json(app.clock())
}

async fn submit_survey(
    State(app): Shared,
    headers: HeaderMap,
    Json(form): Json<SurveyForm>,
) -> Result<(StatusCode, Json<SurveyReceipt>), ApiError> {
    let receipt = app.submit_survey(bearer(&headers), form)?;
    Ok((StatusCode::CREATED, Json(receipt)))
}

#[derive(Debug, Default, Deserialize)]
struct AggregateQuery {
    #[serde(default)]
    rounding: Rounding,
}

async fn survey_aggregate(
    State(app): Shared,
    Query(q): Query<AggregateQuery>,
) -> ApiResult<crate::survey::SurveyAggregate> {
    Ok(Json(app.survey_aggregate(q.rounding)?))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    app: Arc<App>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}
