//! CLI error categories and their exit codes.

use std::fmt;

/// Exit codes: 0 success, 1 statistical check failed, 2 usage/config
/// error, 3 contract violation (spec/data mismatch), 4 numerical failure.
#[derive(Debug)]
pub enum CliError {
    CheckFailed(String),
    Usage(String),
    Contract(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Contract(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::CheckFailed(m)
            | CliError::Usage(m)
            | CliError::Contract(m)
            | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<probscale::Error> for CliError {
    fn from(err: probscale::Error) -> Self {
        use probscale::Error as E;
        let message = err.to_string();
        match err {
            E::InvalidLevel { .. }
            | E::BinomialDomain { .. }
            | E::ConstantTooSmall { .. }
            | E::InfeasibleDiscardRank { .. }
            | E::RankOutOfRange { .. }
            | E::Empty { .. }
            | E::InvalidConfig(_) => CliError::Usage(message),
            E::SampleCountMismatch { .. }
            | E::SpecValidationFailed { .. }
            | E::DimensionMismatch { .. } => CliError::Contract(message),
            E::NonFiniteScore { .. }
            | E::NonFiniteData { .. }
            | E::NonPositiveScale { .. }
            | E::SolveFailed { .. } => CliError::Numerical(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Usage(format!("i/o error: {err}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        CliError::Usage(format!("json error: {err}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
