//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the pipeline and its modules.
#[derive(Debug, Error)]
pub enum Error {
    /// A trace without timestamps cannot be binned.
    #[error("unbinnable trace: {0}")]
    UnbinnableTrace(String),

    /// Input violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A value fell outside its required numeric domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Array or matrix dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A pipeline stage was invoked before its upstream stage produced artifacts.
    #[error("missing stage artifacts: run `{0}` first")]
    MissingStage(String),

    /// A class label required by an operation is absent from the data.
    #[error("missing class: {0}")]
    MissingClass(String),

    /// Training diverged or produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Artifact file has an unknown or corrupt layout.
    #[error("malformed artifact {path}: {reason}")]
    MalformedArtifact { path: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    /// Figure rendering failed.
    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
