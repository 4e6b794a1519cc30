use regloss_core::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{failed} of {total} checks failed")]
    VerifyFailed { failed: usize, total: usize },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 1 usage, 2 no usable gradient, 3 slot rejected, 4 verification failure, 5 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(
                Error::ZeroGradient(_)
                | Error::NoGrowthData(_)
                | Error::UnstableDensityPoint { .. },
            ) => 2,
            CliError::Core(Error::SlotRejected { .. }) => 3,
            CliError::VerifyFailed { .. } => 4,
            _ => 5,
        }
    }
}
