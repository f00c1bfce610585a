use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("value has no multiplicative inverse modulo the prime")]
    NoInverse,
    #[error("flow id {id} is outside the admissible range (limit {limit})")]
    IdOutOfRange { id: u64, limit: u64 },
    #[error("invalid sketch parameters: {0}")]
    InvalidParams(String),
    #[error("sketches do not share parameters")]
    IncompatibleSketches,
    #[error("cannot fold {m} buckets by a factor of {k}")]
    FoldIndivisible { m: usize, k: usize },
    #[error("invalid classifier configuration: {0}")]
    InvalidTower(String),
    #[error("invalid encoder layout: {0}")]
    InvalidLayout(String),
    #[error("groups from different epochs were mixed")]
    EpochMismatch,
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("malformed dump: {0}")]
    Codec(String),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
