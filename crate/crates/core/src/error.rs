use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no word reaches min_count {min_count}; vocabulary would be empty")]
    EmptyVocabulary { min_count: u64 },

    #[error("document {doc_id} is empty")]
    EmptyDocument { doc_id: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("conflicting configuration: {0}")]
    ConfigConflict(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("augmentation strategy `{strategy}` needs a lexicon table that is empty")]
    MissingLexicon { strategy: &'static str },

    #[error("zero-norm vector in row {row}")]
    ZeroNorm { row: usize },

    #[error("non-finite loss at epoch {epoch}, step {step} (backbone {backbone}, contrastive {contrastive})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        backbone: f64,
        contrastive: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::trainer::checkpoint::CheckpointError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
