use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("missing oracle: {0}")]
    MissingOracle(&'static str),

    #[error("flow integration did not reach tolerance {tol:e} within {max_steps} steps (estimate {estimate:e})")]
    FlowTolerance {
        tol: f64,
        max_steps: usize,
        estimate: f64,
    },

    #[error("quadrature: {0}")]
    Quadrature(String),

    #[error("fixed point iteration did not converge in {iterations} iterations (last update {last_update:e})")]
    NotConverged { iterations: usize, last_update: f64 },

    #[error("no invariant reduction: {0}")]
    Reduction(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
