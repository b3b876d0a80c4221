use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("polynomial degree {degree} exceeds the supported maximum {max}")]
    DegreeOverflow { degree: usize, max: usize },

    #[error("degree {degree} is above the model truncation level {truncation}")]
    DegreeAboveTruncation { degree: usize, truncation: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance matrix of degree {degree} is not positive definite (jitter up to {max_jitter:e})")]
    NotPositiveDefinite { degree: usize, max_jitter: f64 },

    #[error("time {t} lies outside the window [{t0}, {t1}]")]
    TimeOutsideWindow { t: f64, t0: f64, t1: f64 },

    #[error("expected {expected:.3e} thinning candidates, above the cap {cap:.3e}; reduce variance_scale")]
    TooManyCandidates { expected: f64, cap: f64 },

    #[error("pattern has {0} events, at least 2 are required")]
    TooFewEvents(usize),

    #[error("unsupported product density order n = {0}")]
    UnsupportedOrder(usize),

    #[error("Renyi order h = 1 is the Shannon limit; use shannon_distance")]
    RenyiOrderOne,

    #[error("integration cost of {evaluations:.3e} integrand evaluations exceeds the guard {limit:.3e}")]
    IntegrationTooExpensive { evaluations: f64, limit: f64 },

    #[error("least squares system is rank deficient")]
    RankDeficient,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{got} replicates supplied, at least {need} are required")]
    TooFewReplicates { got: usize, need: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
