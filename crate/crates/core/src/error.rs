use thiserror::Error;

use crate::lp::LpStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("horizon exceeds data: depth {depth} > signal length {len}")]
    HorizonExceedsData { depth: usize, len: usize },

    #[error("input is not persistently exciting of order {order}: rank {rank} < {required}")]
    NotPersistentlyExciting {
        order: usize,
        rank: usize,
        required: usize,
    },

    #[error("kernel exp(-D/gamma) underflowed; increase gamma or use the log-domain mode")]
    KernelUnderflow,

    #[error("linear program terminated with status {0:?}")]
    Solver(LpStatus),

    #[error("receding-horizon step {step} failed: solver status {status:?}")]
    StepFailed { step: usize, status: LpStatus },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
