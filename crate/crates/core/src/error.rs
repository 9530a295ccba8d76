use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the reconstruction toolkit.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// The MLEM-TV convergence constraint `alpha < s_min / 6` does not hold.
    #[error(
        "convergence constraint violated: alpha < s_min/6 required, got alpha = {alpha:e} with s_min = {s_min:e} (bound {bound:e})"
    )]
    ConvergenceConstraint { alpha: f64, s_min: f64, bound: f64 },

    #[error("negative entry {value:e} at index {index} in {what}")]
    NegativeInput {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{algorithm} diverged at iteration {iteration}: cost {cost:e} exceeded {factor}x initial cost {initial:e} for {patience} consecutive iterations")]
    Diverged {
        algorithm: &'static str,
        iteration: usize,
        cost: f64,
        initial: f64,
        factor: f64,
        patience: usize,
    },

    #[error("degenerate input for {metric}: {reason}")]
    Degenerate { metric: &'static str, reason: String },

    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("checksum mismatch for {path}: header says {expected}, payload hashes to {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("payload size of {path} is {actual} bytes, header implies {expected}")]
    PayloadSize {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::DimensionMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
