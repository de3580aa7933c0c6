use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use crate::api::VERSION;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<dempref::Error> for ServiceError {
    fn from(e: dempref::Error) -> Self {
        use dempref::Error as E;
        match e {
            E::InvalidConfig { field, message } => Self::Invalid { field, message },
            E::OutOfBounds { .. } | E::HorizonMismatch { .. } | E::DimensionMismatch { .. } | E::NonFinite { .. } => {
                Self::invalid("controls", e.to_string())
            }
            E::InvalidRanking(m) => Self::invalid("ranking", m),
            E::UnknownDomain { .. } => Self::invalid("domain", e.to_string()),
            E::TooManyOptions(_) => Self::invalid("n_opt", e.to_string()),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    v: u32,
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let field = match &self {
            Self::Invalid { field, .. } => Some(field.as_str()),
            _ => None,
        };
        let body = ErrorBody {
            v: VERSION,
            error: self.to_string(),
            field,
        };
        (self.status(), Json(body)).into_response()
    }
}
