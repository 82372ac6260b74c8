use sagd::SagdError;

/// Failures mapped onto exit codes: usage errors exit with 2, everything
/// else with 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Run(#[from] anyhow::Error),
}

impl From<SagdError> for CliError {
    fn from(e: SagdError) -> Self {
        match e {
            SagdError::InvalidArgument(msg) => Self::Usage(msg),
            other => Self::Run(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Run(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Check(_) | Self::Run(_) => 1,
        }
    }
}
