use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: corrupt log record: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("item {0:?} not found")]
    NotFound(String),
    #[error("item {0:?} was already decided")]
    AlreadyDecided(String),
    #[error("item {0:?} is already queued")]
    Duplicate(String),
    #[error("{0}")]
    Validation(String),
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Fusion(#[from] cog_core::FusionError),
    #[error(transparent)]
    Eval(#[from] cog_core::EvalError),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("missing or invalid API token")]
    Unauthorized,
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use cog_core::FusionError;
        let status = match &self {
            ApiError::Queue(QueueError::NotFound(_)) | ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Queue(QueueError::AlreadyDecided(_) | QueueError::Duplicate(_)) => StatusCode::CONFLICT,
            ApiError::Queue(QueueError::Validation(_)) | ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Fusion(FusionError::Score(_)) => StatusCode::BAD_GATEWAY,
            ApiError::Fusion(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Eval(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Queue(_) | ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}
