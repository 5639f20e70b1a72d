use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operands that do not fit together (arity mismatch, bad indices, bad facets).
    #[error("structural error: {0}")]
    Structure(String),
    /// Input data violating a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),
    /// Relaxation order below the minimal admissible order.
    #[error("relaxation order {order} is below the minimal order {r_min}")]
    OrderTooLow { order: usize, r_min: usize },
    /// Equality constraints that are not of full row rank.
    #[error("equality constraints are rank deficient (rank {rank} of {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("ill-conditioned system: {0}")]
    Conditioning(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
