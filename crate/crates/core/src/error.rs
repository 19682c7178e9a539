use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}{}", fmt_scope(.scope))]
    NonFinite { op: &'static str, scope: String },

    #[error("tape already consumed by a backward pass")]
    TapeReused,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint config differs from requested config in keys: {}", .0.join(", "))]
    ConfigMismatch(Vec<String>),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("non-finite gradient for parameter {0}; step aborted")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn fmt_scope(scope: &str) -> String {
    if scope.is_empty() {
        String::new()
    } else {
        format!(" in layer {scope}")
    }
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
