use thiserror::Error;

/// Errors raised by the modelling and sampling routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BmmsError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("incomplete chain: {0}")]
    IncompleteChain(String),

    #[error("numerical singularity: {0}")]
    NumericalSingularity(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, BmmsError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(BmmsError::InvalidDimension(msg.into()))
}
