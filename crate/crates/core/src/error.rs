use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("degenerate factor: row {row} has quadrature norm {norm:e} at or below the floor")]
    DegenerateFactor { row: usize, norm: f64 },

    #[error("mass matrix is numerically zero")]
    SingularMass,

    #[error("basis degenerated: {discarded} of {rank} mass directions discarded")]
    DegenerateBasis { discarded: usize, rank: usize },

    #[error("clustered eigenvalue at index {index} requires subspace-trace mode")]
    ClusteredEigenvalue { index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("no closed-form spectrum for domain `{0}`")]
    NoClosedForm(String),

    #[error("inconsistent decomposition: {0}")]
    Decomposition(String),

    #[error("index {index} out of range (have {len})")]
    OutOfRange { index: usize, len: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
