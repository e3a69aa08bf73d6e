use thiserror::Error;

/// Errors raised by the filtering, localization and experiment machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ensemble must have at least {required} members, got {got}")]
    EnsembleTooSmall { required: usize, got: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("S not SPD: innovation covariance factorization failed")]
    NotSpd,
    #[error("model blow-up{}", member.map(|m| format!(" in member {m}")).unwrap_or_default())]
    ModelBlowUp { member: Option<usize> },
    #[error("non-differentiable combiner: {0}")]
    NonDifferentiable(String),
    #[error("prior shape α < 1 unsupported (mean {mean}, variance {variance})")]
    PriorShape { mean: f64, variance: f64 },
    #[error("radius {value} below lower bound {bound}")]
    BelowBound { value: f64, bound: f64 },
    #[error("non-finite cost at the initial point")]
    NonFiniteCost,
    #[error("oracle: every candidate radius failed")]
    OracleExhausted,
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
