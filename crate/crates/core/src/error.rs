use std::path::PathBuf;

use thiserror::Error;

use crate::tooth::ToothLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or contract violations by the caller.
    Usage,
    /// Malformed, inconsistent or unreadable data.
    Data,
    /// The numerics failed (degenerate geometry, singular systems, infeasibility).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("cardinality mismatch: {left} vs {right} points")]
    CardinalityMismatch { left: usize, right: usize },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("invalid tooth label {0}")]
    InvalidLabel(u8),

    #[error("invalid teeth-matrix position ({row}, {column})")]
    InvalidPosition { row: &'static str, column: u8 },

    #[error("label mismatch: expected {expected}, got {got}")]
    LabelMismatch { expected: ToothLabel, got: ToothLabel },

    #[error("duplicate tooth label {0}")]
    DuplicateLabel(ToothLabel),

    #[error("unknown tooth label {0} for this dataset")]
    UnknownLabel(ToothLabel),

    #[error("too few common teeth for alignment: {got} (need at least {needed})")]
    TooFewLabels { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no adjacent support teeth exist for the missing set")]
    NoSupport,

    #[error("singular linear system in CPD M-step (lambda*sigma2 = {regularization:e})")]
    SingularSystem { regularization: f64 },

    #[error(
        "sparse coding infeasible: least-squares residual {least_squares_residual:e} exceeds epsilon {epsilon:e}"
    )]
    Infeasible {
        epsilon: f64,
        least_squares_residual: f64,
    },

    #[error("dictionary file version mismatch: found {found:?}")]
    VersionMismatch { found: String },

    #[error("dictionary file checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

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

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidLabel(_)
            | Error::InvalidPosition { .. }
            | Error::InvalidConfig(_)
            | Error::InvalidInput(_)
            | Error::UnknownLabel(_) => ErrorKind::Usage,
            Error::Degenerate(_) | Error::SingularSystem { .. } | Error::Infeasible { .. } => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }
}
