use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: objective = {value}")]
    Diverged {
        epoch: usize,
        batch: usize,
        value: f64,
    },

    #[error("malformed field file at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("bad csv header: column {index} is `{found}`, expected `{expected}`")]
    Header {
        index: usize,
        found: String,
        expected: String,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the command-line driver.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::NonFinite(_) => "nonfinite",
            Error::Diverged { .. } => "diverged",
            Error::Format { .. } => "format",
            Error::Header { .. } => "header",
            Error::Singular(_) => "singular",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
