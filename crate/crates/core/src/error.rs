use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DiuError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DiuError {
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate embedding: norm {norm:e} is below eps {eps:e}")]
    DegenerateEmbedding { norm: f64, eps: f64 },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training diverged at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error("checkpoint error in {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl DiuError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        DiuError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DiuError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, DiuError::Config { .. })
    }
}
