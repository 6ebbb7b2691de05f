use thiserror::Error;

/// Errors raised across the simulation stack.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or shape violates a configuration contract.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric operation received input outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dataset construction, ingestion or partitioning failed.
    #[error("data error: {0}")]
    Data(String),

    /// FedAvg preconditions failed; the round is aborted.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn data<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Data(msg.into()))
}
