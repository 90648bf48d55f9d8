use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("voxel cache: {0}")]
    VoxelCache(String),

    #[error("weights: {0}")]
    Weights(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{0}")]
    NotFound(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    /// Process exit code for the CLI, one value per failure family.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::NotFound(_) => 3,
            Error::Parse { .. } | Error::InvalidMesh(_) | Error::VoxelCache(_) | Error::Weights(_) => 4,
            Error::Dataset(_) | Error::Json(_) => 5,
            Error::Shape(_) | Error::Invariant(_) => 6,
            Error::Io { .. } => 7,
        }
    }
}
