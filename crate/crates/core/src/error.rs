use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("division by a jet with zero constant term")]
    SingularJet,

    #[error("unregistered expression handle {0}")]
    UnknownExpression(usize),

    #[error("dimension {0} out of range (expected 2..=5)")]
    Dimension(usize),

    #[error("cost order {0} out of range (expected 2..=4)")]
    CostOrder(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty grid: the cost is a mean over zero points")]
    EmptyCost,

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("non-finite gradient at epoch {epoch}, parameter {index}")]
    NanGradient { epoch: usize, index: usize },

    #[error("non-finite cost at epoch {epoch}")]
    NanCost { epoch: usize },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NanGradient { .. }
                | Error::NanCost { .. }
                | Error::NoConvergence { .. }
                | Error::SingularJet
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
