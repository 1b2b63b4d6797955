use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode {mode} out of range for an order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("rank {rank} exceeds mode size {size} in mode {mode}")]
    RankTooLarge { mode: usize, rank: usize, size: usize },

    #[error("rank {rank} is not strictly subgeneric for shape {shape:?} (need r < {bound:.3})")]
    NotSubgeneric { rank: usize, shape: Vec<usize>, bound: f64 },

    #[error("factor vector {mode} is zero")]
    ZeroFactor { mode: usize },

    #[error("retraction produced the zero tensor")]
    DegenerateRetraction,

    #[error("Gram matrix is numerically singular (pivot {index})")]
    SingularGram { index: usize },

    #[error("optimal coefficient of term {term} is zero")]
    ZeroCoefficient { term: usize },

    #[error("explicit assembly needs {entries} entries, above the limit {limit}")]
    SizeGuard { entries: usize, limit: usize },

    #[error("non-positive curvature along the gradient")]
    NonPositiveCurvature,

    #[error("zero model decrease")]
    ZeroModelDecrease,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("target tensor is zero")]
    ZeroTensor,

    #[error("random start failed after {0} attempts")]
    InitializationFailed(usize),

    #[error("hot-restart budget of {0} exhausted")]
    RestartBudgetExhausted(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
