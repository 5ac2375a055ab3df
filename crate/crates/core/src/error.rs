use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zone mismatch: {0} vs {1}")]
    ZoneMismatch(String, String),

    #[error("empty track")]
    EmptyTrack,

    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("unsupported raster format: {0}")]
    UnsupportedFormat(String),

    #[error("truncated raster: expected {expected} bytes of pixel data, found {found}")]
    TruncatedRaster { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("writing {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Output {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the caller's inputs rather than a bug or an
    /// environment failure. The CLI maps these to exit status 1.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Contract(_) | Error::Output { .. })
    }
}
