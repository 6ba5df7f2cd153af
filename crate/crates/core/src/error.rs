use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

/// Configuration and shape errors raised by the compute kernels.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("channel mismatch: expected {expected} input channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: expected vectors of length {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}
