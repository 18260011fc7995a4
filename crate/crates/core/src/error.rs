use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite gradient for parameter `{param}`{}", iteration.map(|n| format!(" at iteration {n}")).unwrap_or_default())]
    NonFiniteGradient { param: String, iteration: Option<u64> },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("ingestion error in {}: {message}", file.display())]
    Ingest { file: PathBuf, message: String },

    #[error("trajectory of {len} frames is shorter than the required {required}")]
    TrajectoryLength { len: usize, required: usize },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("operation `{op}` is not supported by variant {variant}")]
    UnsupportedVariant { op: &'static str, variant: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error families, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    DataFormat,
    Numerical,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension { .. }
            | Error::Config(_)
            | Error::Domain(_)
            | Error::TrajectoryLength { .. }
            | Error::Sampling(_)
            | Error::UnsupportedVariant { .. }
            | Error::Comparison(_) => ErrorKind::Config,
            Error::Format { .. } | Error::Ingest { .. } | Error::Json(_) => ErrorKind::DataFormat,
            Error::NonFiniteGradient { .. } | Error::NonFinite(_) | Error::UndefinedMetric(_) => {
                ErrorKind::Numerical
            }
            Error::Io(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
