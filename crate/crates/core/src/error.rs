use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape mismatch, stale cache, bad argument).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Non-finite values showed up where finite ones are required.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("empty batch: {0}")]
    EmptyBatch(String),
    #[error("no valid triplet: {0}")]
    NoTriplet(String),
    #[error("latent grid holds no visit mass")]
    EmptyGrid,
    #[error("no candidate subgoal within the sampling radius")]
    NoCandidate,
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
