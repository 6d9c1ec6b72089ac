use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
///
/// Each variant belongs to one of the coarse categories returned by
/// [`TqdError::category`], which the command-line front end maps onto its
/// process exit codes.
#[derive(Debug, Error)]
pub enum TqdError {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("record `{id}` has a non-finite {field} score")]
    NonFiniteScore { id: String, field: &'static str },

    #[error("record `{id}` has not been normalized")]
    Unnormalized { id: String },

    #[error("constant score sequence")]
    ConstantScores,

    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no retainable samples")]
    NoRetainableSamples,

    #[error(
        "rejection sampling gave up after {attempts} draws with {accepted} accepted \
         (acceptance rate {rate:.6})"
    )]
    RejectionCapExceeded {
        attempts: usize,
        accepted: usize,
        rate: f64,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("record `{id}`: {message}")]
    Payload { id: String, message: String },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("artifact mismatch: {0}")]
    Artifact(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Io,
    Data,
    Numeric,
    Artifact,
}

impl TqdError {
    pub fn category(&self) -> ErrorCategory {
        use TqdError::*;
        match self {
            InvalidParameter(_) => ErrorCategory::Usage,
            Io { .. } => ErrorCategory::Io,
            EmptyDataset
            | NonFiniteScore { .. }
            | Unnormalized { .. }
            | ConstantScores
            | TooFewRecords { .. }
            | NoRetainableSamples
            | Manifest { .. }
            | Payload { .. }
            | Json(_) => ErrorCategory::Data,
            RejectionCapExceeded { .. } | NonFiniteActivation { .. } | NonFiniteLoss { .. } => {
                ErrorCategory::Numeric
            }
            ShapeMismatch { .. } | Artifact(_) => ErrorCategory::Artifact,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TqdError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = TqdError> = std::result::Result<T, E>;
