use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// A config value failed validation; `field` is its dotted path.
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("cannot parse config: {0}")]
    Parse(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed results in {}: {message}", path.display())]
    Results { path: PathBuf, message: String },

    #[error("unpaired seeds: method `{method}` has no result for seed {seed}")]
    Unpaired { method: String, seed: u64 },

    #[error(transparent)]
    Core(#[from] lrlab_core::Error),
}

impl HarnessError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn results(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        HarnessError::Results {
            path: path.into(),
            message: message.into(),
        }
    }
}
