use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {routine}: {message}")]
    Domain {
        routine: &'static str,
        message: String,
    },

    #[error("{routine} did not converge after {iterations} iterations")]
    NoConvergence {
        routine: &'static str,
        iterations: usize,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate hypothesis name `{0}`")]
    DuplicateName(String),

    #[error("line {line}: p-value {value} is outside [0, 1]")]
    PValueRange { line: usize, value: f64 },

    #[error("unknown hypothesis `{0}`")]
    UnknownName(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("full closure is limited to n <= {cap} hypotheses, got {n}")]
    CapExceeded { n: usize, cap: usize },

    #[error("local test failed on {set}: {source}")]
    LocalTest { set: String, source: Box<Error> },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("local test does not meet the shortcut requirements: {0}")]
    ShortcutRequirement(String),

    #[error("no applicable method: {0}")]
    NoMethod(String),
}

impl Error {
    pub(crate) fn domain(routine: &'static str, message: impl Into<String>) -> Self {
        Error::Domain {
            routine,
            message: message.into(),
        }
    }

    /// Broad classification used by front ends to pick exit codes and status codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Parse { .. }
            | Error::DuplicateName(_)
            | Error::PValueRange { .. }
            | Error::UnknownName(_)
            | Error::Invalid(_)
            | Error::Dimension(_)
            | Error::RankDeficient => ErrorCategory::Input,
            Error::CapExceeded { .. } | Error::ShortcutRequirement(_) | Error::NoMethod(_) => {
                ErrorCategory::MethodUnavailable
            }
            Error::Domain { .. } | Error::NoConvergence { .. } => ErrorCategory::Numeric,
            Error::LocalTest { source, .. } => source.category(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    MethodUnavailable,
    Numeric,
}
