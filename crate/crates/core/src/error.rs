use thiserror::Error;

use crate::families::FamilyKind;

#[derive(Debug, Error)]
pub enum Error {
    #[error("observation outside the support of {family}: {detail}")]
    Domain { family: FamilyKind, detail: String },

    #[error("invalid {family} parameters: {detail}")]
    InvalidParam { family: FamilyKind, detail: String },

    #[error("family mismatch: {0} vs {1}")]
    FamilyMismatch(FamilyKind, FamilyKind),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid cluster count: {0}")]
    InvalidK(String),

    #[error("decoder has no uncertainty regularization")]
    NoRegularization,

    #[error("probe step must be positive, got {0}")]
    InvalidEpsilon(f64),

    #[error("point is off the open simplex: {0}")]
    OffSimplex(String),

    #[error("curve parameter {0} outside [0, 1]")]
    OutOfRange(f64),

    #[error("energy is not finite at t = {t}")]
    NonFiniteEnergy { t: f64 },

    #[error("metric is singular at {0:?}")]
    SingularMetric(Vec<f64>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("normalizer estimate is degenerate (effective sample size {ess:.2})")]
    DegenerateEstimate { ess: f64 },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(family: FamilyKind, detail: impl Into<String>) -> Self {
        Error::InvalidParam {
            family,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(family: FamilyKind, detail: impl Into<String>) -> Self {
        Error::Domain {
            family,
            detail: detail.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs' shape or syntax.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteEnergy { .. }
                | Error::SingularMetric(_)
                | Error::NonFinite(_)
                | Error::DegenerateEstimate { .. }
                | Error::InvalidParam { .. }
                | Error::Domain { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
