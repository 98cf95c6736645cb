use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("training diverged at step {step}: cel={cel}, bcl={bcl}, total={total}")]
    NonFiniteLoss {
        step: usize,
        cel: f64,
        bcl: f64,
        total: f64,
    },

    #[error("poisson blend: {0}")]
    Poisson(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
