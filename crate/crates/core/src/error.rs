use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("Hilbert-space dimension {dim} exceeds the limit {limit}")]
    DimensionLimit { dim: usize, limit: usize },

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("operator is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPositive { eigenvalue: f64 },

    #[error("operator is singular (smallest eigenvalue {eigenvalue:e})")]
    Singular { eigenvalue: f64 },

    #[error("operators on supports {a:?} and {b:?} do not commute (norm {norm:e})")]
    NonCommuting { a: Vec<usize>, b: Vec<usize>, norm: f64 },

    #[error("model violates its bounds: {0}")]
    InvalidModel(String),

    #[error("missing value for subset {0:?}")]
    MissingSubset(Vec<usize>),

    #[error("group members {a} and {b} have overlapping supports")]
    OverlappingGroup { a: usize, b: usize },

    #[error("spectral gap {gap:e} below threshold {threshold:e}")]
    GapTooSmall { gap: f64, threshold: f64 },

    #[error("detailed balance violated (residual {residual:e})")]
    DetailedBalance { residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid schedule table: {0}")]
    ScheduleTable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
