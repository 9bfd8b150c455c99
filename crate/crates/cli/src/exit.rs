use teehr::error::{AnalysisError, ConfigError, DataError, HawkesError, TrainError};

pub const USAGE: u8 = 1;
pub const VALIDATION: u8 = 2;
pub const NUMERICAL: u8 = 3;

/// A specification the command rejects before running.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

/// A non-finite result.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Numerical(pub String);

#[derive(Debug)]
pub enum Failure {
    Clap(clap::Error),
    Usage(anyhow::Error),
}

/// Exit code for an error raised while running a command.
pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<HawkesError>() || cause.is::<ConfigError>() {
            return VALIDATION;
        }
        if cause.is::<Numerical>() {
            return NUMERICAL;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Divergence { .. } => NUMERICAL,
                TrainError::Config(_) | TrainError::Transfer { .. } => VALIDATION,
                _ => USAGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<AnalysisError>() {
            return match e {
                AnalysisError::Epsilon(_) | AnalysisError::Config(_) => VALIDATION,
                _ => USAGE,
            };
        }
        if cause.is::<DataError>() {
            return USAGE;
        }
    }
    USAGE
}
