use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use wordharvest::Error;

/// Error body of every failed request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    pub fn not_found(kind: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {kind}: {id}"))
    }
}

/// `(status, code)` for every engine error.
pub fn classify(e: &Error) -> (StatusCode, &'static str) {
    match e {
        Error::Domain(_) | Error::Parameter(_) => (StatusCode::BAD_REQUEST, "validation"),
        Error::Config(_) | Error::Dimension { .. } => (StatusCode::BAD_REQUEST, "config_mismatch"),
        Error::Image(_) => (StatusCode::BAD_REQUEST, "bad_image"),
        Error::NoModel(_) => (StatusCode::NOT_FOUND, "no_model"),
        Error::CurvesUndefined(_) => (StatusCode::NOT_FOUND, "no_curves"),
        Error::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
        Error::UnknownToken => (StatusCode::NOT_FOUND, "unknown_token"),
        Error::ConflictingActions(_) => (StatusCode::CONFLICT, "conflicting_actions"),
        Error::TokenExpired => (StatusCode::GONE, "token_expired"),
        Error::Migration { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "migration"),
        Error::Io(_) | Error::Json(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = classify(&e);
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::validation(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::validation(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
