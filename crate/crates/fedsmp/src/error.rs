use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Idx {
        path: PathBuf,
        #[source]
        source: fedsmp_core::Error,
    },

    #[error(transparent)]
    Core(#[from] fedsmp_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn config_err(key: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        key: key.into(),
        message: message.into(),
    }
}
