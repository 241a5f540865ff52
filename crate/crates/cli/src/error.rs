use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config parse error: missing required key `{0}`")]
    MissingKey(String),

    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: String, msg: String },

    #[error("bad override: {0}")]
    Override(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("malformed report {path}: {msg}")]
    Report { path: PathBuf, msg: String },

    #[error(transparent)]
    Core(#[from] smallmass::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
