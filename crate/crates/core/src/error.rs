use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left} vs {right}")]
    Shape { left: String, right: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("reference signal has zero energy")]
    ZeroReference,

    #[error("noise signal has zero energy (item {item})")]
    ZeroNoise { item: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("model config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("forward cache does not belong to this model state")]
    StaleCache,

    #[error("dataset view has role {found}, expected {expected}")]
    Role { expected: &'static str, found: &'static str },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported wav format: {0}")]
    UnsupportedFormat(String),

    #[error("wav is not mono ({channels} channels)")]
    Multichannel { channels: u16 },

    #[error("truncated {what}: needed {needed} bytes, {available} available")]
    Truncated { what: &'static str, needed: usize, available: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::Shape { left: left.into(), right: right.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by the numbers themselves rather than by
    /// bad inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
