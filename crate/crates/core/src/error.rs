use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error in {file} at byte {offset}: {message}")]
    Parse {
        file: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("unsupported camera model {0} (only undistorted PINHOLE and SIMPLE_PINHOLE are accepted)")]
    UnsupportedCameraModel(String),

    #[error("non-finite {field} on Gaussian {index}")]
    NonFinite { index: usize, field: &'static str },

    #[error("depth alignment failed: {0}")]
    AlignmentFailed(String),

    #[error("lockstep violation: {0}")]
    Lockstep(String),

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },

    #[error("{0}")]
    Pipeline(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::result::Result<T, std::io::Error> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
