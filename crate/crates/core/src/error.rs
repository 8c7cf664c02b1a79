use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("feature mismatch: expected {expected:?}, got {actual:?}")]
    FeatureMismatch { expected: Vec<String>, actual: Vec<String> },

    #[error("series too short: {len} samples, need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("missing gradient for optimization target {0}")]
    MissingGradient(usize),

    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("simulation became unstable at sample {index}")]
    Unstable { index: usize },
}

impl Error {
    /// True for failures of the numerics (divergence, NaN/Inf) as opposed to
    /// malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::Unstable { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
