use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (left dim {left}, right dim {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid embedding set: {0}")]
    InvalidEmbeddingSet(String),

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing class labels: {0}")]
    MissingLabels(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("SVD did not converge")]
    SvdNonConvergence,

    #[error(
        "Sinkhorn scaling underflowed at reg = {reg:e}; the regularisation is too small for this \
         cost range, retry with a larger reg (the solver already runs in the log domain)"
    )]
    SinkhornUnderflow { reg: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("GMM component {component} collapsed {times} times during EM")]
    GmmDegenerate { component: usize, times: usize },

    #[error("determinant of the iterate is {det:e} (must be positive); was the projection step skipped?")]
    NonPositiveDeterminant { det: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the environment rather than by the caller's inputs.
    pub fn is_environmental(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Stage { source, .. } => source.is_environmental(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
