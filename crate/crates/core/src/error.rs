use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("point ({0}, {1}) lies outside the closed domain")]
    OutsideDomain(f64, f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("wrong cost model: {0}")]
    WrongModel(String),

    #[error("plan is not induced by a map: row {row} puts {fraction:e} of its mass off the main entry")]
    NotAMap { row: usize, fraction: f64 },

    #[error("separation violated: {0}")]
    Separation(String),

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
