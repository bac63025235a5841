use thiserror::Error;

use crate::trace::StationId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("station {0} is not on the line")]
    UnknownStation(StationId),

    #[error("requested k={k} exceeds the number of vertices n={n}")]
    TooManyClusters { k: usize, n: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("negative count in bin {0}")]
    NegativeCount(usize),

    #[error("input is empty: {0}")]
    Empty(&'static str),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
