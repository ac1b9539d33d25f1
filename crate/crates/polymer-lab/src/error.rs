//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("horizon {0} is invalid: walks must have at least one step")]
    InvalidHorizon(usize),

    #[error(
        "endpoint {endpoint} is invalid for horizon {horizon}: \
         need |endpoint| <= horizon and endpoint = horizon (mod 2)"
    )]
    InvalidEndpoint { horizon: usize, endpoint: i64 },

    #[error(
        "scaled endpoint x*sqrt(N) = {target} is unreachable within horizon {horizon}"
    )]
    UnreachableEndpoint { horizon: usize, target: f64 },

    #[error("environment horizons differ: {0} vs {1}")]
    HorizonMismatch(usize, usize),

    #[error("horizon {0} must be even to split at half time")]
    OddHorizon(usize),

    #[error("need at least {min} replicates, got {got}")]
    InsufficientReplicates { got: usize, min: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("malformed environment file: {0}")]
    EnvironmentFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
