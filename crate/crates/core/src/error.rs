use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (wrong vector length, empty
    /// range, missing baseline, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown function id `{function_id}` at {path}:{line}")]
    UnknownFunction {
        function_id: String,
        path: PathBuf,
        line: usize,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("manager `{manager}` returned invalid allocation {cpu} cores / {mem} MB for invocation {inv_id}")]
    InvalidAllocation {
        manager: String,
        inv_id: u64,
        cpu: u32,
        mem: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
