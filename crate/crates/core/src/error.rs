use thiserror::Error;

/// Errors produced by the model, optimizer, simulator and configuration layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate Markov chain: success probability of state {state} is zero")]
    DegenerateChain { state: usize },

    #[error("infinite retransmissions: success probability is zero")]
    InfiniteRetransmission,

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("validation failure: {0}")]
    Validation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code used by the `afb` binary.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config { .. } | Error::Io { .. } => 1,
            Error::Validation(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
