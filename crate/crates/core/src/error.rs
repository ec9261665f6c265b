use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid segment: {0}")]
    InvalidSegment(String),

    #[error("io error{}{}: {source}", path_note(.path), row_note(.row))]
    Io {
        path: Option<PathBuf>,
        row: Option<usize>,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid label {label:?}{}", row_note(.row))]
    InvalidLabel { label: String, row: Option<usize> },

    #[error("decode error in {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),

    #[error("invalid atom parameters: {0}")]
    InvalidAtomParams(String),

    #[error("invalid resolution: {0}")]
    InvalidResolution(String),

    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite value produced in stage {stage}")]
    Numerical { stage: &'static str },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("invalid fold count k={0}, need k >= 2")]
    InvalidK(usize),

    /// A file header did not match what the reader expects (magic, version,
    /// or dimensions disagreeing with another artifact).
    #[error("header mismatch: {0}")]
    Header(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

fn path_note(path: &Option<PathBuf>) -> String {
    path.as_ref()
        .map(|p| format!(" at {}", p.display()))
        .unwrap_or_default()
}

fn row_note(row: &Option<usize>) -> String {
    row.map(|r| format!(" (manifest row {r})")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: Some(path.into()),
            row: None,
            source,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io {
            path: None,
            row: None,
            source,
        }
    }
}
