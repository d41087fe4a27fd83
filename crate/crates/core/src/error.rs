use thiserror::Error;

/// Errors produced by the model library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum VebmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no patient group: at least one individual must be labelled patient")]
    NoPatients,

    #[error("no control group: at least one individual must be labelled control")]
    NoControls,

    #[error("feature {feature}: {reason}")]
    InsufficientData { feature: usize, reason: String },

    #[error("feature {feature}: EM diverged ({reason})")]
    EmDiverged { feature: usize, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not a permutation: {0}")]
    NotAPermutation(String),

    #[error("matrix is not doubly stochastic: {0}")]
    NotDoublyStochastic(String),

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("frequency rows are not normalised: {0}")]
    UnnormalisedRows(String),

    #[error("KL overflow: {0}")]
    KlOverflow(String),
}

pub type Result<T> = std::result::Result<T, VebmError>;
