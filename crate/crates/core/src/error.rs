use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: expected {expected:?}, found {found:?}")]
    GridMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite field")]
    NonFiniteField,
    #[error("fractional power of negative value")]
    FractionalPowerOfNegative,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("initial v must be strictly positive")]
    NonPositiveInitialV,
    #[error("u0 must be nonnegative")]
    NegativeInitialU,
    #[error("u0 must not vanish identically")]
    VanishingInitialU,
    #[error("invalid initial data: {0}")]
    InvalidInitialData(String),
    #[error("rhs overflow at cell {cell}")]
    RhsOverflow { cell: usize },
    /// Explicit step produced a negative value; the caller should retry with a smaller dt.
    #[error("step rejected: {field} negative at cell {cell}")]
    StepRejected { field: &'static str, cell: usize },
    #[error("state blew up at t={t}")]
    BlowUp { t: f64 },
    #[error("positivity unrecoverable at t={t}")]
    PositivityUnrecoverable { t: f64 },
    #[error("v positivity lost")]
    VPositivityLost,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
