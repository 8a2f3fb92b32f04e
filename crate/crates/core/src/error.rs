use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Model,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("{}: row {row}: {message}", path.display())]
    Ingestion {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    EmptyInput { path: PathBuf, message: String },

    #[error("feature mismatch: model expects {expected:?}, data has {found:?}")]
    FeatureMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("architecture parse error at token {position}: {message}")]
    Architecture { position: usize, message: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("non-finite gradient in layer {layer} ({kind})")]
    NonFiniteGradient { layer: usize, kind: String },

    #[error("model load error: {0}")]
    ModelLoad(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{arch}: {source}")]
    Ablation {
        arch: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Architecture { .. } | Error::Usage(_) => ErrorCategory::Usage,
            Error::Config(_)
            | Error::Shape { .. }
            | Error::Ingestion { .. }
            | Error::EmptyInput { .. }
            | Error::FeatureMismatch { .. }
            | Error::Io(_)
            | Error::Csv(_) => ErrorCategory::Data,
            Error::ModelLoad(_) | Error::Json(_) => ErrorCategory::Model,
            Error::Training { .. } | Error::NonFiniteGradient { .. } | Error::Internal(_) => {
                ErrorCategory::Internal
            }
            Error::Ablation { source, .. } => source.category(),
        }
    }

    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}
