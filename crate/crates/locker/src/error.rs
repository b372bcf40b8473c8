//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by data loading, basis construction, fitting and tuning.
#[derive(Debug, Error)]
pub enum LockerError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file} at line {line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    #[error("no subject has observations in both files")]
    EmptyDataset,

    #[error("degenerate time domain [{lo}, {hi}]")]
    DegenerateDomain { lo: f64, hi: f64 },

    #[error("subject {subject}: time {time} outside domain [{lo}, {hi}]")]
    TimeOutsideDomain {
        subject: String,
        time: f64,
        lo: f64,
        hi: f64,
    },

    #[error("t = {t} outside basis domain [{lo}, {hi}]")]
    OutsideDomain { t: f64, lo: f64, hi: f64 },

    #[error("interval index {index} outside 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("singular linear system in {context}; consider a larger roughness penalty or fewer basis functions")]
    SingularSystem { context: &'static str },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("all tuning grid fits failed: {details}")]
    GridExhausted { details: String },

    #[error("all cross-validation folds were skipped")]
    AllFoldsSkipped,

    #[error("scenario {scenario}: all {replicates} replicates failed")]
    AllReplicatesFailed { scenario: String, replicates: usize },
}

impl LockerError {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        LockerError::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LockerError>;
