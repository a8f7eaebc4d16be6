use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid offspring factor {value} (must be finite and non-negative)")]
    InvalidWeight { value: f64 },

    #[error("truncated tail mass {discarded} exceeds the declared bound {bound}")]
    TruncationViolated { discarded: f64, bound: f64 },

    #[error("population cap exceeded: {attempted} particles (cap {cap})")]
    PopulationCap { attempted: usize, cap: usize },

    #[error("non-finite value {value} encountered while {context}")]
    NonFinite { value: f64, context: &'static str },

    #[error("ancestry unavailable: trajectory was stored in generation-only mode")]
    AncestryDiscarded,

    #[error("no particle carries label {0}")]
    UnknownLabel(String),

    #[error("type point outside the grid: {0}")]
    OffGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("kernel row {row} has non-finite total mass")]
    NonFiniteRow { row: usize },

    #[error("kernel has a negative entry at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize },

    #[error("zero kernel has no Perron root")]
    ZeroKernel,

    #[error("non-primitive or slowly mixing kernel: {0}")]
    NotPrimitive(String),

    #[error("polynomial exponent fit {raw:.4} is not within 0.25 of an integer")]
    BetaNotInteger { raw: f64 },

    #[error("gamma sequence is not summable (tail ratio {ratio:.6})")]
    NotSummable { ratio: f64 },

    #[error("not certifiable: {0}")]
    NotCertifiable(String),

    #[error("too few replicates: {got} (need at least {need})")]
    TooFewReplicates { got: usize, need: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
