use thiserror::Error;

/// Errors produced by data ingestion, estimation and analysis.
#[derive(Debug, Error)]
pub enum Error {
    /// A named column is missing or the schema is inconsistent.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell could not be parsed; `row` is the 1-based data row.
    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    /// An input violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// The optimizer could not be started or made no progress.
    #[error("optimization error: {0}")]
    Optimization(String),

    /// The estimator hit an unrecoverable numerical condition.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// The likelihood became non-finite during estimation.
    #[error("non-finite log-likelihood at EM iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },

    /// A post-estimation computation received unusable inputs.
    #[error("analytics error: {0}")]
    Analytics(String),

    /// A configuration file could not be interpreted.
    #[error("config error: {0}")]
    Config(String),

    /// A synthetic-data specification is unusable.
    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
