use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("not a stochastic matrix: {0}")]
    NotStochastic(String),

    #[error("chain is reducible (support graph is not strongly connected)")]
    Reducible,

    #[error("chain is periodic with period {0}")]
    Periodic(usize),

    #[error("invalid gap distribution: {0}")]
    InvalidGap(String),

    #[error("row {0} has no support entries")]
    EmptyRowSupport(usize),

    #[error("invalid support: {0}")]
    InvalidSupport(String),

    #[error("state {0} is never left in the observed sequence")]
    UnvisitedState(usize),

    #[error("no trajectory covering all {n_states} states after {attempts} attempts")]
    RetryBudgetExhausted { n_states: usize, attempts: usize },

    #[error("weighting matrix is not admissible (reciprocal condition {rcond:e})")]
    Inadmissible { rcond: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
