use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("value {value} at sample {sample}, channel {channel} is outside [-1, 1]")]
    Domain {
        sample: usize,
        channel: usize,
        value: f64,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("ill-conditioned covariance: {0}")]
    IllConditioned(String),

    #[error("window too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(
        "corrupt block for subject {subject}, gesture {gesture}, repetition {repetition}: {reason}"
    )]
    Corruption {
        subject: u32,
        gesture: u32,
        repetition: u32,
        reason: String,
    },

    #[error("{path}: parse error at row {row}{}: {reason}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        row: usize,
        column: Option<usize>,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
