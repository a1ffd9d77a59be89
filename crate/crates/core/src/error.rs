use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-integer count {value:?} at line {line} of {path}")]
    NonIntegerCount {
        path: PathBuf,
        line: usize,
        value: String,
    },

    #[error(
        "subgroup {subgroup} spans groups {first} and {second}; cells of different groups cannot share a subgroup"
    )]
    SubgroupCrossesGroups {
        subgroup: String,
        first: String,
        second: String,
    },

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("initial state has -inf log-posterior in block {block}")]
    InvalidInitialization { block: String },

    #[error("non-finite mean at cell {cell}, gene {gene}")]
    NonFiniteMean { cell: usize, gene: usize },

    #[error("requested {requested} components but the matrix has rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("{0}")]
    Undefined(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
