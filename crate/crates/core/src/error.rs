use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two parameter vectors (or a vector and a network) disagree on layout.
    #[error("shape mismatch at segment {index}: expected {expected}, found {found}")]
    ShapeMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("{path}: {source}")]
    Idx {
        path: PathBuf,
        #[source]
        source: IdxError,
    },
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}

/// Failures while decoding an IDX file. Offsets are byte positions in the file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic number {found:#010x} at offset {offset} (expected {expected:#010x})")]
    BadMagic {
        offset: usize,
        expected: u32,
        found: u32,
    },
    #[error("truncated file at offset {offset}: needed {needed} bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("image count {images} does not match label count {labels} (header offset {offset})")]
    CountMismatch {
        offset: usize,
        images: usize,
        labels: usize,
    },
    #[error("label {label} at offset {offset} exceeds class count {class_count}")]
    LabelOutOfRange {
        offset: usize,
        label: u8,
        class_count: usize,
    },
}
