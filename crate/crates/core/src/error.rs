use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("not symmetric: max asymmetry {0:e}")]
    NotSymmetric(f64),

    #[error("eigen no convergence after {0} sweeps")]
    EigenNoConvergence(usize),

    #[error("not PSD: smallest eigenvalue {0:e}")]
    NotPsd(f64),

    #[error("not positive definite (pivot {0} failed)")]
    NotPositiveDefinite(usize),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("empty task: {0}")]
    EmptyTask(String),

    #[error("insufficient calibration pairs: need {needed}, got {got}")]
    InsufficientCalibration { needed: usize, got: usize },

    #[error("non-finite loss at epoch {epoch} (model {model})")]
    NonFiniteLoss { epoch: usize, model: String },

    #[error("stale forward cache: {0}")]
    StaleCache(&'static str),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },

    #[error("checksum mismatch for blob `{0}`")]
    Checksum(String),

    #[error("truncated data: {0}")]
    Truncated(String),

    #[error("refusing to overwrite {} (use --force)", .0.display())]
    Exists(PathBuf),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
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
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Exists(_) => 1,
            Error::NotSymmetric(_)
            | Error::EigenNoConvergence(_)
            | Error::NotPsd(_)
            | Error::NotPositiveDefinite(_)
            | Error::NonFiniteLoss { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
