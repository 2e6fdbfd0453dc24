use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no derivative available for {0}")]
    MissingDerivative(String),

    #[error("point {0} lies outside the domain")]
    NotInDomain(String),

    #[error("too few usable samples for a fit: {found} < {required}")]
    InsufficientData { found: usize, required: usize },

    #[error("correction series does not converge: tau^theta * |B22| = {rate:.3e} >= 1")]
    SeriesDivergent { rate: f64 },

    #[error("|h| = {norm:.3e} exceeds the connection radius eps = {epsilon:.3e}")]
    OutOfRadius { norm: f64, epsilon: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("B12 block is rank deficient (smallest singular value {smallest:.3e})")]
    RankDeficient { smallest: f64 },

    #[error("non-integrable tail: {0}")]
    NonIntegrable(String),

    #[error("near-field integrand is not integrable: singular exponent {exponent} must stay below {limit}")]
    SingularExponent { exponent: f64, limit: f64 },

    #[error("kernel is not symmetric and s = {s} >= 1/2; a symmetrized kernel is needed")]
    NeedsSymmetrizedKernel { s: f64 },

    #[error("kernel bound violated at |v - v'| = {distance:.3e}: value {value:.3e} outside [{lower:.3e}, {upper:.3e}]")]
    KernelBound {
        distance: f64,
        value: f64,
        lower: f64,
        upper: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
