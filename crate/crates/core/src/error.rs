use thiserror::Error;

/// Errors produced by the library.
///
/// Every variant corresponds to an invalid input or an unmet precondition;
/// none of them encodes a mathematical verdict.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("cannot parse {what} from {input:?}: {reason}")]
    Parse {
        what: &'static str,
        input: String,
        reason: String,
    },

    #[error("covariance matrix is not positive semidefinite")]
    NotPositiveSemidefinite,

    #[error("covariance matrix is not strictly positive definite")]
    NotPositiveDefinite,

    #[error("off-diagonal covariance must be nonzero")]
    ZeroCorrelation,

    #[error("shift vector must be nonzero")]
    ZeroShift,

    #[error("covariance matrix is reducible")]
    Reducible,

    #[error("problem is degenerate (det = 0)")]
    Degenerate,

    #[error("matrix dimension {0} outside supported range 2..=8")]
    Dimension(usize),

    #[error("matrix is not square")]
    NotSquare,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("series constant term must be {0}")]
    ConstantTerm(&'static str),

    #[error("coefficient index (0, 0) is excluded")]
    ConstantIndex,

    #[error("interior index required, got ({0}, {1})")]
    BoundaryIndex(u64, u64),

    #[error("t must be positive")]
    NonPositiveT,

    #[error("cutoff requires t >= 3")]
    CutoffTooSmall,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precision of {requested} bits is below the minimum of {minimum}")]
    Precision { requested: usize, minimum: usize },

    #[error("ladder needs at least {minimum} rungs, got {found}")]
    LadderTooShort { minimum: usize, found: usize },

    #[error("ladder must be strictly increasing")]
    LadderNotIncreasing,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
