use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid sharing configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A residual loss or overflow rate came out negative. This means the
    /// transfer rules and the battery derivatives disagree for some cell.
    #[error("rate balance violated for agent {agent}: residual {residual:e} in cell ({region1:?}, {region2:?}) with r = ({r1}, {r2})")]
    RateBalance {
        agent: u8,
        residual: f64,
        region1: crate::dynamics::Region,
        region2: crate::dynamics::Region,
        r1: f64,
        r2: f64,
    },

    #[error("event loop exceeded {cap} iterations within one slot at t = {t}")]
    EventCap { cap: usize, t: f64 },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: sample spacing violated between line {line} ({prev}) and line {next_line} ({next}): expected {expected} minutes")]
    Spacing {
        path: PathBuf,
        line: usize,
        next_line: usize,
        prev: String,
        next: String,
        expected: f64,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
