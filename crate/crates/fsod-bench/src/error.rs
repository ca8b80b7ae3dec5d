//! Crate-wide error type and result alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {reason}")]
    InvalidBox { reason: String },

    #[error("invalid image dims: width={width}, height={height}")]
    InvalidDims { width: u32, height: u32 },

    #[error("empty region: {context}")]
    EmptyRegion { context: String },

    #[error("invalid cost matrix: {reason}")]
    InvalidCostMatrix { reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("annotation {ordinal} of image '{image_id}' rejected: {reason}")]
    BadAnnotation {
        image_id: String,
        ordinal: usize,
        reason: String,
    },

    #[error("split infeasible: class '{class}' needs {required} boxes in the {side} split but at most {attainable} are attainable")]
    Infeasible {
        class: String,
        side: &'static str,
        required: u64,
        attainable: u64,
    },

    #[error("no feasible split found after {trials} seed trials (feasibility not disproven; try more trials)")]
    FeasibilityNotFound { trials: usize },

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error("backend request failed after {attempts} attempts: {reason}")]
    BackendExhausted { attempts: u32, reason: String },

    #[error("malformed backend response: {reason}")]
    MalformedResponse { reason: String },

    #[error("config hash mismatch: record was produced by {recorded}, current config hashes to {current}")]
    ConfigHashMismatch { recorded: String, current: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 validation, 2 backend exhaustion, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BackendExhausted { .. } => 2,
            Error::Io(_) | Error::Parse { .. } | Error::Json(_) => 3,
            _ => 1,
        }
    }
}
