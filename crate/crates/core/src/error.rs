use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("image decode error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("unsupported bit depth in {path}: {detail}")]
    UnsupportedBitDepth { path: PathBuf, detail: String },

    #[error("malformed json in {path}: {message}")]
    Json { path: PathBuf, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("node {node} has no neighbors above the similarity floor")]
    IsolatedNode { node: usize },

    #[error("could not place {requested} mitochondria without overlap (placed {placed})")]
    MitochondriaPlacement { requested: usize, placed: usize },

    #[error("no membrane samples in the initial pool")]
    NoMembraneSamples,

    #[error("no seeds below membrane threshold {threshold}")]
    NoSeeds { threshold: f64 },

    #[error("not enough unlabeled samples: need {needed}, have {available}")]
    PoolExhausted { needed: usize, available: usize },

    #[error("label source failure: {0}")]
    LabelSource(String),

    #[error("model format error: {0}")]
    ModelFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
