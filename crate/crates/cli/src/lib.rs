//! Batch runner for long-range XXZ ground-state and entanglement experiments.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod table;

use thiserror::Error;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const UNCONVERGED: i32 = 3;
    pub const ORACLE_MISMATCH: i32 = 4;
    pub const INVALID_OUTPUT: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("run did not converge: {0}")]
    Unconverged(String),
    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),
    #[error("validation failed:\n{0}")]
    Invalid(String),
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => exit::CONFIG,
            CliError::Unconverged(_) => exit::UNCONVERGED,
            CliError::OracleMismatch(_) => exit::ORACLE_MISMATCH,
            CliError::Invalid(_) => exit::INVALID_OUTPUT,
            CliError::Run(_) | CliError::Io(_) => exit::FAILURE,
        }
    }
}

/// Worker count after applying the environment cap; 0 means all cores.
pub fn effective_workers(requested: usize) -> usize {
    let req = if requested == 0 { lrxxz_core::exec::default_workers() } else { requested };
    let cap = std::env::var(config::MAX_WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&c| c > 0);
    cap.map_or(req, |c| req.min(c)).max(1)
}
