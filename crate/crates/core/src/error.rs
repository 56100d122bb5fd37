use thiserror::Error;

/// Errors raised by tensor construction, structured solves and the ALS drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    /// The reference tensor of a relative error is zero on the evaluated entries.
    #[error("reference norm is zero; relative error undefined")]
    ZeroReference,

    #[error("materialization of a {rows}x{cols} operator exceeds the size guard of {limit} entries")]
    TooLarge { rows: usize, cols: usize, limit: usize },

    #[error("leverage profile is degenerate (all scores are zero)")]
    DegenerateProfile,

    #[error("masked Gram matrix is singular ({observed} observed rows for {unknowns} unknowns); add ridge regularization or observe more entries")]
    SingularMaskedGram { observed: usize, unknowns: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
