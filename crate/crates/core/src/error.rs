use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("bad image data: {0}")]
    Image(String),

    #[error("pixel ({px}, {py}) outside a {width}x{height} image")]
    PixelOutOfBounds {
        px: f64,
        py: f64,
        width: u32,
        height: u32,
    },

    #[error("sample positions must be strictly increasing (index {index}: {prev} then {next})")]
    NonMonotonicSamples { index: usize, prev: f64, next: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown preset '{name}' (known: {known})")]
    UnknownPreset { name: String, known: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("non-finite loss at iteration {iteration}: {details}")]
    NonFinite { iteration: usize, details: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
