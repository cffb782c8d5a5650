use std::path::PathBuf;

use lorahop::engine::ScenarioError;
use lorahop::phy::PhyError;
use lorahop::planner::PlanError;
use thiserror::Error;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_SCHEMA: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("--set {assignment}: {message}")]
    Override { assignment: String, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Radio(#[from] PhyError),
    #[error("{0}")]
    Usage(String),
    #[error("infeasible plan: {0}")]
    Infeasible(#[from] PlanError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io { .. } => EXIT_RUNTIME,
            Self::Infeasible(_) => EXIT_INFEASIBLE,
            Self::Schema { .. } | Self::Override { .. } | Self::Scenario(_) | Self::Radio(_) | Self::Usage(_) => {
                EXIT_SCHEMA
            }
        }
    }
}
