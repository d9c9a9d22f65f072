use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel regression needs at least one sample")]
    EmptySampleSet,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("design matrix is singular (collinear covariates)")]
    SingularDesign,

    #[error("residual covariance is not positive-definite even after ridge")]
    DegenerateCovariance,

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("basis is rank deficient")]
    RankDeficient,

    #[error("need more samples than dimensions (n = {n}, p = {p})")]
    InsufficientSamples { n: usize, p: usize },

    #[error("non-finite entry in {0}")]
    NonFiniteEntry(String),

    #[error("unknown {kind} `{value}`")]
    UnknownName { kind: &'static str, value: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
