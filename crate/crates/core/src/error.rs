use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at tape node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("unsupported primitive: {0}")]
    UnsupportedPrimitive(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("dataset error at line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::UnsupportedPrimitive(_) => "unsupported_primitive",
            Error::Config(_) => "config",
            Error::DegenerateStatistics(_) => "degenerate_statistics",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Domain(_) => "domain",
            Error::Solver(_) => "solver",
            Error::Diverged { .. } => "diverged",
            Error::Dataset { .. } => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
