use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bit sequence has odd length {0}; QPSK needs bit pairs")]
    OddBitCount(usize),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("delay {delay} is not shorter than the frame length {len}")]
    DelayTooLong { delay: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("input is all zeros")]
    ZeroInput,
    #[error("input too short: need at least {needed} samples, got {actual}")]
    TooShort { needed: usize, actual: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("capture format error: {0}")]
    Capture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
