use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RuntimeError {
    /// Not a container, unsupported version, or malformed manifest.
    #[error("format error: {0}")]
    Format(String),
    /// Checksum mismatch, truncation or trailing bytes.
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("validation error{}: {message}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Validation {
        layer: Option<usize>,
        message: String,
    },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] haste_core::Error),
}

pub type Result<T> = std::result::Result<T, RuntimeError>;

impl RuntimeError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self::Validation {
            layer: None,
            message: message.into(),
        }
    }

    pub fn at_layer(layer: usize, message: impl Into<String>) -> Self {
        Self::Validation {
            layer: Some(layer),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 input format, 3 validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Format(_) | Self::Corrupt(_) | Self::Io { .. } => 2,
            Self::Validation { .. } | Self::Core(_) => 3,
        }
    }
}
