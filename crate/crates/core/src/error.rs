use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("spring {spring}: attachment {side} refers to missing {what}")]
    DanglingAttachment {
        spring: usize,
        side: &'static str,
        what: String,
    },

    #[error("degenerate spring{}: endpoint separation {length:e} m", spring.map(|s| format!(" {s}")).unwrap_or_default())]
    DegenerateSpring { spring: Option<usize>, length: f64 },

    #[error("simulation blow-up at step {step}, rod {rod}: state component {value:e} exceeds guard")]
    BlowUp { step: usize, rod: usize, value: f64 },

    #[error("insufficient data: {rows} usable rows for {unknowns} unknowns")]
    InsufficientData { rows: usize, unknowns: usize },

    #[error("rank-deficient design (rank {rank} of {unknowns}); unidentifiable combinations: {}", null_space.join("; "))]
    RankDeficient {
        rank: usize,
        unknowns: usize,
        null_space: Vec<String>,
    },

    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },

    #[error("no control data: every control force in the dataset is zero")]
    NoControlData,

    #[error("fitted parameter {name} is not positive ({value:e})")]
    NonPositive { name: String, value: f64 },

    #[error("horizon mismatch: predicted {predicted} states, reference {reference}")]
    HorizonMismatch { predicted: usize, reference: usize },

    #[error("unknown identification method `{0}`")]
    UnknownStrategy(String),

    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("protocol {protocol}, seed {seed}: {source}")]
    Protocol {
        protocol: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed data in {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
}

impl Error {
    /// The innermost error, looking through protocol context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Protocol { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
