use num_complex::Complex64;
use thiserror::Error;

/// Errors produced by the spectral toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The integrator could not keep the Wronskian at 1. Retrying with a finer grid usually helps.
    #[error("accuracy failure: Wronskian residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    AccuracyFailure { residual: f64, tolerance: f64 },

    #[error("Newton iteration did not converge at t = {t} from seed {seed} (residual {residual:.3e})")]
    NoConvergence { t: f64, seed: Complex64, residual: f64 },

    #[error("missed root at t = {t}: found {found} eigenvalues (with multiplicity) where the Galerkin oracle has {expected}")]
    MissedRoot { t: f64, found: usize, expected: usize },

    #[error("band continuation failed on t-interval [{t_lo}, {t_hi}]")]
    ContinuationFailure { t_lo: f64, t_hi: f64 },

    /// Both coefficients of the closed-form Bloch solution vanish (two-dimensional eigenspace).
    #[error("degenerate Bloch solution formula at t = {t}, lambda = {lambda}")]
    DegenerateFormula { t: f64, lambda: Complex64 },

    #[error("norming constant underflow: |alpha| = {alpha:.3e}")]
    AlphaUnderflow { alpha: f64 },

    #[error("function support [{lo}, {hi}] does not fit the translation truncation K = {k}")]
    SupportOverflow { lo: f64, hi: f64, k: usize },

    #[error("grouped principal-value integral at t0 = {t0} failed the Cauchy test (last difference {difference:.3e})")]
    NonConvergence { t0: f64, difference: f64 },

    #[error("p(lambda) branch inconsistency: lambda- and t-domain integrands differ by {mismatch:.3e}")]
    BranchInconsistency { mismatch: f64 },

    #[error("potential is not self-adjoint")]
    NotSelfAdjoint,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::AccuracyFailure { .. } => "accuracy-failure",
            Error::NoConvergence { .. } => "no-convergence",
            Error::MissedRoot { .. } => "missed-root",
            Error::ContinuationFailure { .. } => "continuation-failure",
            Error::DegenerateFormula { .. } => "degenerate-formula",
            Error::AlphaUnderflow { .. } => "alpha-underflow",
            Error::SupportOverflow { .. } => "support-overflow",
            Error::NonConvergence { .. } => "non-convergence",
            Error::BranchInconsistency { .. } => "branch-inconsistency",
            Error::NotSelfAdjoint => "not-self-adjoint",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
