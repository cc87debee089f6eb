//! Exit-code policy: 0 success, 1 usage error, 2 data/format error,
//! 3 invariant violation.

use aode::checkpoint::CheckpointError;
use aode::eval::EvalError;
use aode::merge::MergeError;
use aode::schedules::ScheduleError;
use aode::toy::ToyError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVARIANT,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        // Anything wrong with bytes we were handed is a data error.
        Self::data(e.to_string())
    }
}

impl From<MergeError> for Failure {
    fn from(e: MergeError) -> Self {
        match e {
            MergeError::WeightSum { .. }
            | MergeError::InvalidWeight { .. }
            | MergeError::WeightCountMismatch { .. }
            | MergeError::AlphaOutOfRange(_)
            | MergeError::BadBaseIndex { .. }
            | MergeError::EmptyInput => Self::usage(e.to_string()),
            MergeError::Incompatible { .. } => Self::data(e.to_string()),
            MergeError::Checkpoint(inner) => inner.into(),
        }
    }
}

impl From<ScheduleError> for Failure {
    fn from(e: ScheduleError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidNormalizationConfig(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<ToyError> for Failure {
    fn from(e: ToyError) -> Self {
        match e {
            ToyError::InvalidConfig { .. } | ToyError::UnknownDomain { .. } => {
                Self::usage(e.to_string())
            }
            ToyError::NonFiniteLoss { .. } => Self::invariant(e.to_string()),
            ToyError::Schedule(inner) => inner.into(),
            ToyError::Merge(inner) => inner.into(),
            ToyError::Checkpoint(inner) => inner.into(),
            ToyError::Eval(inner) => inner.into(),
            ToyError::DimensionMismatch { .. } | ToyError::MalformedCheckpoint { .. } => {
                Self::data(e.to_string())
            }
        }
    }
}

/// I/O with the path attached; bare `io::Error` never reaches the user.
pub fn io_failure(context: &str, path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure::data(format!("{context} {}: {e}", path.display()))
}
