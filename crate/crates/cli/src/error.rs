use thiserror::Error;

use triscale_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("missing artifact {0}; run the earlier stage first")]
    MissingArtifact(String),

    #[error("{0} check(s) failed")]
    ChecksFailed(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("plotting failed: {0}")]
    Plot(String),
}

impl CliError {
    /// 2 for bad input, 3 for solver failures, 4 for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                CoreError::InvalidInput(_)
                | CoreError::HypothesisViolation { .. }
                | CoreError::NotGridExact(_)
                | CoreError::EmptyPhase { .. }
                | CoreError::Disconnected { .. }
                | CoreError::NotSpd { .. }
                | CoreError::CostCap { .. } => 2,
                _ => 3,
            },
            CliError::ChecksFailed(_) => 4,
            CliError::MissingArtifact(_) => 2,
            CliError::Io(_) | CliError::Json(_) | CliError::Csv(_) | CliError::Plot(_) => 3,
        }
    }
}
