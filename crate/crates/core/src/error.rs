use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the JSCC pipeline.
///
/// The variants map onto the failure classes the command line reports with
/// distinct exit codes (see [`JsccError::exit_code`]).
#[derive(Debug, Error)]
pub enum JsccError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing checkpoint cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl JsccError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        JsccError::Io { path: path.into(), source }
    }

    /// Process exit code for this error class: 2 configuration, 3 data,
    /// 4 numerical abort, 5 missing checkpoints.
    pub fn exit_code(&self) -> i32 {
        match self {
            JsccError::Config(_) | JsccError::Shape(_) | JsccError::Contract(_) => 2,
            JsccError::Ingestion(_) | JsccError::Io { .. } => 3,
            JsccError::Numerical(_) => 4,
            JsccError::Checkpoint(_) | JsccError::MissingCells(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, JsccError>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::JsccError::Config(format!($($arg)*)) };
}
macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::JsccError::Shape(format!($($arg)*)) };
}
macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::JsccError::Contract(format!($($arg)*)) };
}
pub(crate) use {config_err, contract_err, shape_err};
