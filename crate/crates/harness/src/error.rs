use std::io;

use metampc_core::ocp::OcpError;
use metampc_core::policy::PolicyError;
use metampc_core::ppo::checkpoint::CheckpointError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Solver(_) => 3,
            HarnessError::Numeric(_) => 4,
            _ => 1,
        }
    }
}

impl From<PolicyError> for HarnessError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Ocp(OcpError::NonFinite) => HarnessError::Numeric(e.to_string()),
            PolicyError::Ocp(_) => HarnessError::Solver(e.to_string()),
            PolicyError::Riccati(_) | PolicyError::Mlp(_) => HarnessError::Numeric(e.to_string()),
        }
    }
}
