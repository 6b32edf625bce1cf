use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("overflow: magnitude needs {needed} bits but format holds {available}")]
    Overflow { needed: u64, available: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("structurally infeasible: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
