use thiserror::Error;

/// Errors produced by fusion, resampling, and model operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Every log-weight in a normalization was `-inf`; no particle carries
    /// any posterior mass. Usually means the likelihoods and the proposal
    /// ensemble have no overlapping support.
    #[error("total weight collapse: all log-weights are -inf")]
    TotalWeightCollapse,

    /// A single partition's weights collapsed during per-partition
    /// normalization. Fatal rather than silently dropped: a lone surviving
    /// particle from a degenerate partition would be replicated many times
    /// in the resample and bias the fused estimate.
    #[error("partition {partition} collapsed: all log-weights are -inf")]
    PartitionCollapse { partition: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A documented precondition was violated (e.g. unnormalized weights
    /// where normalized ones are required).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Orbit propagation did not converge or was otherwise impossible.
    #[error("propagation failed: {0}")]
    Propagation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }
}
