use std::path::PathBuf;

/// Errors produced by the depth-estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is behind camera (homogeneous w = {0:e})")]
    BehindCamera(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("size {height}x{width} is not divisible by 2^{level}")]
    NotDivisible {
        height: usize,
        width: usize,
        level: usize,
    },
    #[error("no valid pixels")]
    NoValidPixels,
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
