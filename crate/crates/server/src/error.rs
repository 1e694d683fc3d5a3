use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use crate::api::{ErrorBody, API_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unsupported payload version {0}")]
    Version(u32),
    #[error("{0}")]
    BadRequest(String),
    /// The request does not fit the session's current state.
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Core(#[from] activeseg::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str) {
        use activeseg::Error as E;
        match self {
            ApiError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            ApiError::Version(_) => (StatusCode::BAD_REQUEST, "unsupported_version"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            ApiError::Core(e) => match e {
                E::MissingFile(_) => (StatusCode::NOT_FOUND, "missing_file"),
                E::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
                E::Json { .. } | E::Image { .. } | E::UnsupportedBitDepth { .. } => {
                    (StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset")
                }
                E::DimensionMismatch(_) => (StatusCode::UNPROCESSABLE_ENTITY, "dimension_mismatch"),
                E::NoMembraneSamples => (StatusCode::UNPROCESSABLE_ENTITY, "no_membrane_samples"),
                E::PoolExhausted { .. } => (StatusCode::CONFLICT, "pool_exhausted"),
                _ => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument"),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = self.parts();
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorBody { v: API_VERSION, error: kind.into(), message: self.to_string() };
        (status, Json(body)).into_response()
    }
}

pub fn check_version(v: u32) -> Result<(), ApiError> {
    if v == API_VERSION {
        Ok(())
    } else {
        Err(ApiError::Version(v))
    }
}
