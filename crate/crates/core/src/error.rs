use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate depth {0}: occlusion order must be total")]
    DuplicateDepth(i32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("incompatible checkpoint: parameter `{name}`: {reason}")]
    Checkpoint { name: String, reason: String },

    #[error("{gt} ground-truth instances exceed {protos} prototypes")]
    TooManyInstances { gt: usize, protos: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
