use thiserror::Error;

/// Errors raised by the theory, generation, spectral and harness layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("critical spike: ell = {ell} sits exactly on the phase transition 1 + sqrt(gamma) = {edge}")]
    CriticalSpike { ell: f64, edge: f64 },

    #[error("subcritical spike: ell = {ell} is below the phase transition 1 + sqrt(gamma) = {edge}")]
    SubcriticalSpike { ell: f64, edge: f64 },

    #[error("invalid cumulant contraction: sigma^2 = {0} is not positive")]
    InvalidCumulant(f64),

    #[error("degenerate spectrum: spike eigenvalues must be simple, got {0:?}")]
    DegenerateSpectrum(Vec<f64>),

    #[error("eigenvalue at index {index} is not simple (gap {gap:e})")]
    DegenerateEigenvalue { index: usize, gap: f64 },

    #[error("resolvent domain: t = {t} is not above the noise spectrum (mu1 = {mu1})")]
    ResolventDomain { t: f64, mu1: f64 },

    #[error("index {index} out of range for dimension {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("need at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },

    #[error("eigensolver failed on replicate {replicate}: {message}")]
    EigenSolver { replicate: u64, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
