use std::path::PathBuf;

use num_bigint::BigUint;

use crate::arch::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed code text {input:?}: {reason}")]
    Parse { input: String, reason: String },

    #[error("operation code {value} at position {position} is out of range (expected 0..=2)")]
    OutOfRangeCode { position: usize, value: i64 },

    #[error("invalid architecture: {0}")]
    Validation(#[from] Violation),

    #[error("unknown backbone family {0:?}")]
    UnknownFamily(String),

    #[error("invalid backbone family {name:?}: {reason}")]
    InvalidFamily { name: String, reason: String },

    #[error("invalid allocation space: {0}")]
    InvalidSpace(String),

    #[error("no stage allocation satisfies the budget")]
    NoCandidates,

    #[error("operation space has {size} candidates, more than the limit of {max}")]
    SpaceTooLarge { size: BigUint, max: u64 },

    #[error("evaluator table has no entry for {0} and no default score")]
    MissingEntry(String),

    #[error("evaluator utilities do not cover {0}")]
    Uncovered(String),

    #[error("operation prefix already covers all {0} blocks; score it as a full architecture")]
    PrefixComplete(usize),

    #[error("support {support} is too small for a receptive field of {required} (must be odd and at least the field)")]
    SupportTooSmall { support: usize, required: u64 },

    #[error("stage index {index} out of range for {stages} stages")]
    StageOutOfRange { index: usize, stages: usize },

    #[error("records use different budget models")]
    MixedBudgetModels,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(input: &str, reason: impl Into<String>) -> Self {
        Error::Parse {
            input: input.to_string(),
            reason: reason.into(),
        }
    }

    /// Process exit code for this error: 2 validation, 3 infeasible space, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoCandidates => 3,
            Error::Io { .. } | Error::Csv(_) => 4,
            _ => 2,
        }
    }
}
