use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unstable queue: load {lambda} >= capacity {capacity}")]
    Unstable { lambda: f64, capacity: f64 },

    #[error("truncation too small: {0}")]
    Truncation(String),

    #[error("distribution p has mass {mass:e} at state {state} where q vanishes")]
    NotAbsolutelyContinuous { state: usize, mass: f64 },

    #[error("cost guard: {0}")]
    CostGuard(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("outside validity range: {0}")]
    OutOfRange(String),

    #[error("divergent series: {0}")]
    Divergent(String),

    #[error("no negative drift outside K (gamma = {gamma:e})")]
    NoNegativeDrift { gamma: f64 },

    #[error("broken chain: {0}")]
    BrokenChain(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
