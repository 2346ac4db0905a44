use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad magic")]
    BadMagic,

    #[error("version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("context overflow: need {required} positions, model holds {available}")]
    ContextOverflow { required: usize, available: usize },

    #[error("generation truncated after {} tokens: context full", partial.len())]
    TruncatedOutput { partial: Vec<u32> },

    #[error("episode {index}: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("task error: {0}")]
    Task(String),

    #[error("fingerprint mismatch: artifact {artifact}, model {model}")]
    Fingerprint { artifact: String, model: String },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_episode(self, index: usize) -> Self {
        Error::Episode {
            index,
            source: Box::new(self),
        }
    }
}
