use thiserror::Error;

/// Errors produced by the accounting, training, quantile and pipeline code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("RDP order grids do not match")]
    GridMismatch,

    #[error("unsupported RDP order {0}: subsampled Gaussian bound needs an integer order >= 2")]
    UnsupportedOrder(f64),

    #[error(
        "infeasible privacy budget: training alone spends epsilon {spent:.6} > target {target:.6}"
    )]
    InfeasibleBudget { spent: f64, target: f64 },

    #[error("numeric failure at step {step}: {detail}")]
    NumericFailure { step: usize, detail: String },

    #[error("rank overflow: r + m_n = {needed} exceeds the {available} available scores")]
    RankOverflow { needed: usize, available: usize },

    #[error("rank {rank} out of range for {n} scores")]
    RankOutOfRange { rank: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error at row {row}, column {column}: {detail}")]
    Parse {
        row: usize,
        column: String,
        detail: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
