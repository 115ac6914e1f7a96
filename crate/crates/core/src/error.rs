use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scene spec error: {0}")]
    Spec(String),

    #[error("non-finite loss at ray {ray}: {detail}")]
    NonFinite { ray: usize, detail: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("dataset error ({path}): {detail}")]
    Load { path: PathBuf, detail: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

impl Error {
    /// Process exit status: 2 configuration, 3 data or checkpoint, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::Spec(_) => 2,
            Error::Format(_)
            | Error::Load { .. }
            | Error::UndefinedMetric(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Image(_) => 3,
            Error::NonFinite { .. } => 4,
        }
    }
}
