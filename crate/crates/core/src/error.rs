use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A numeric argument is out of its admissible range or dimensions disagree.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A dataset or shard cannot satisfy the request (empty, too small).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed binary input.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// The mechanism adds no noise, so no finite privacy guarantee exists.
    #[error("infinite privacy loss: noise multiplier must be positive")]
    InfinitePrivacyLoss,

    /// Noise calibration could not reach the requested target.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Secure aggregation inputs are inconsistent.
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}
