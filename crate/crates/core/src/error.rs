use thiserror::Error;

use crate::report::ConditionReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A type or quantile argument fell outside the admissible range.
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("no parameters for bundle {0}")]
    MissingParameter(String),

    #[error("numeric failure: {message} (residual {residual:e})")]
    Numeric { message: String, residual: f64 },

    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    Bracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid model: {0}")]
    Validation(String),

    #[error("inconsistent result: {0}")]
    Consistency(String),

    #[error("ambiguous: {0}")]
    Ambiguity(String),

    #[error("degenerate normalization: {0}")]
    Degenerate(String),

    #[error("internal logic error: {0}")]
    Logic(String),

    #[error("{n} goods exceeds the supported maximum of {max}")]
    Size { n: usize, max: usize },

    /// An assumption check failed and the caller did not force the run.
    #[error("refusing to solve: {} does not hold", .0.name)]
    Refused(Box<ConditionReport>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numeric(message: impl Into<String>, residual: f64) -> Self {
        Error::Numeric {
            message: message.into(),
            residual,
        }
    }

    /// Short machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::MissingParameter(_) => "missing_parameter",
            Error::Numeric { .. } => "numeric",
            Error::Bracket { .. } => "bracket",
            Error::Argument(_) => "argument",
            Error::Validation(_) => "validation",
            Error::Consistency(_) => "consistency",
            Error::Ambiguity(_) => "ambiguity",
            Error::Degenerate(_) => "degenerate",
            Error::Logic(_) => "logic",
            Error::Size { .. } => "size",
            Error::Refused(_) => "refused",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}
