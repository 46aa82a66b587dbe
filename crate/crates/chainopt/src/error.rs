use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
