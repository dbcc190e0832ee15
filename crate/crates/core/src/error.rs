use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// `(λI − A)` is numerically singular at the requested frequency.
    #[error("singular system at lambda = {re}{im:+}i (pivot ratio {pivot_ratio:.3e})")]
    Singular { re: f64, im: f64, pivot_ratio: f64 },

    #[error("dimension {dim} exceeds the dense limit {limit}")]
    DimensionGuard { dim: usize, limit: usize },

    #[error("eigensolver did not converge")]
    EigenNonConvergence,

    #[error("{count} eigenvalues qualify as the zero mode (tolerance {tol:.3e})")]
    MultipleZeroModes { count: usize, tol: f64 },

    #[error("no positive energy samples to fit")]
    NoDecayData,

    #[error("decay fit needs at least {needed} positive samples in the window, found {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("invalid snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics themselves (singular solves,
    /// eigensolver breakdown), as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::EigenNonConvergence
                | Error::MultipleZeroModes { .. }
                | Error::NoDecayData
                | Error::InsufficientSamples { .. }
        )
    }
}
