use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is rank deficient (smallest/largest singular value ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("invalid rank {r} for ambient dimension {n}")]
    InvalidRank { r: usize, n: usize },
    #[error("basis spans the whole space; no orthogonal complement")]
    NoComplement,
    #[error("support size {s} exceeds dimension {n}")]
    InvalidSupport { s: usize, n: usize },
    #[error("observation batch is empty")]
    EmptyBatch,
    #[error("noise spectra are not isotropic")]
    NotIsotropic,
    #[error("corollary inapplicable: q = {0} must be < 1")]
    CorollaryInapplicable(f64),
    #[error("invalid example setup: {0}")]
    InvalidExample(String),
    #[error("support matrix is numerically singular (condition estimate {0:e})")]
    SupportDegenerate(f64),
    #[error("infeasible bound: {0}")]
    Infeasible(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
