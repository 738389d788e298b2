use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("subject `{subject}` has no units")]
    EmptySubject { subject: String },

    #[error("no-support-at-lag: no unit pair within bandwidth {bandwidth} of lag {delta}")]
    NoSupportAtLag { delta: f64, bandwidth: f64 },

    #[error("lag {delta} with bandwidth {bandwidth} exceeds the pair cap {cap}")]
    LagBeyondCap { delta: f64, bandwidth: f64, cap: f64 },

    #[error("degenerate-G: sum of the lower triangle of the within-unit covariance is {sum:e}")]
    DegenerateG { sum: f64 },

    #[error("insufficient-subjects: leave-one-subject-out needs at least 2 subjects, found {found}")]
    InsufficientSubjects { found: usize },

    #[error("no-usable-pairs: no candidate bandwidth produced a usable cross-validation score")]
    NoUsablePairs,

    #[error("taper-exceeds-grid: taper is nonzero at {delta_max}, beyond the tabulated range")]
    TaperExceedsGrid { delta_max: f64 },

    #[error("invalid-correlation: unit correlation matrix is not positive semidefinite (jitter up to {jitter:e})")]
    InvalidCorrelation { jitter: f64 },

    #[error("bias-undefined: correlation is not twice differentiable at lag {delta}")]
    BiasUndefined { delta: f64 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("lag grid [{first}, {last}] does not cover [{lo}, {hi}]")]
    GridCoverage { lo: f64, hi: f64, first: f64, last: f64 },

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
