use cog_core::{CorpusError, EvalError, FusionError, LossError, ScoreError};
use cog_service::{ApiError, QueueError};
use thiserror::Error;

/// Process exit code for bad input: malformed files, flags or configs.
pub const EXIT_VALIDATION: i32 = 1;
/// Process exit code for everything that failed at run time.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => EXIT_VALIDATION,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn validation(msg: impl std::fmt::Display) -> Self {
        Self::Validation(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        Self::Runtime(msg.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => Self::Runtime(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Config(_) | ScoreError::EmptyText | ScoreError::MissingProvenance(_) => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Score(inner) => inner.into(),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Corpus(inner) => inner.into(),
            EvalError::Fusion(inner) => inner.into(),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<QueueError> for CliError {
    fn from(e: QueueError) -> Self {
        match e {
            QueueError::Io { .. } => Self::Runtime(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        Self::Validation(e.to_string())
    }
}
