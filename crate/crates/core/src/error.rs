use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(
        "calibration infeasible: epsilon {epsilon} not reachable with z <= {z_max} \
         (delta {delta}, q {q}, steps {steps})"
    )]
    CalibrationInfeasible {
        epsilon: f64,
        delta: f64,
        q: f64,
        steps: u64,
        z_max: f64,
    },

    #[error("calibration infeasible for clients {0:?}")]
    ClientsInfeasible(alloc::vec::Vec<usize>),

    #[error("unknown privacy distribution `{0}`")]
    UnknownDistribution(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("ledger violation: {0}")]
    Ledger(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
