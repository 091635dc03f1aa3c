use thiserror::Error;

/// Errors raised by the numerical and learning routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got {left} and {right}")]
    DimensionMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("matrix is not Hermitian (residual {residual:.3e})")]
    NotHermitian { residual: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("eigendecomposition did not produce finite values")]
    NonFinite,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("channel is identically zero")]
    ZeroChannel,
    #[error("checkpoint parse error at line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
    #[error("config error at `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_mismatch(
    op: &'static str,
    left: (usize, usize),
    right: (usize, usize),
) -> Error {
    Error::DimensionMismatch {
        op,
        left: format!("{}x{}", left.0, left.1),
        right: format!("{}x{}", right.0, right.1),
    }
}

pub(crate) fn len_mismatch(op: &'static str, expected: usize, got: usize) -> Error {
    Error::DimensionMismatch {
        op,
        left: format!("expected length {expected}"),
        right: format!("got {got}"),
    }
}
