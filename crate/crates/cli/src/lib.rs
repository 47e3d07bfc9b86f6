//! Search, ablation, sweep, gradient-check and evaluation commands over
//! `lbt-core`, with reproducible on-disk run directories.

pub mod commands;
pub mod config;
pub mod output;

use lbt_core::data::DataError;
use lbt_core::engine::EngineError;
use lbt_core::model::ModelError;
use lbt_core::oracle::OracleError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Divergence(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Gradcheck(_) => EXIT_GRADCHECK,
            CliError::Io { .. } | CliError::Other(_) => EXIT_FAILURE,
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Divergence { .. } => CliError::Divergence(e.to_string()),
            EngineError::InvalidConfig(msg) => CliError::Config(msg),
            EngineError::Data(d) => d.into(),
            EngineError::Model(m) => m.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidSpec(_) | DataError::Capacity { .. } => CliError::Config(e.to_string()),
            other => CliError::Other(format!("data: {other}")),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidSpec(_) | ModelError::UnknownOp(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Engine(inner) => inner.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}
