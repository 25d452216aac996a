use std::path::PathBuf;

use diffcore::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FaceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("container: {0}")]
    Container(String),
    #[error("image: {0}")]
    Image(String),
    #[error("{0}")]
    Diff(#[from] DiffError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("mask bin infeasible: {0}")]
    Infeasible(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, FaceError>;

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> FaceError {
    FaceError::Io { path: path.to_path_buf(), source }
}
