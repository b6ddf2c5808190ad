use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("pair is not controllable (rank {rank} of {n})")]
    Uncontrollable { rank: usize, n: usize },
    #[error("pair is not observable (rank {rank} of {n})")]
    Unobservable { rank: usize, n: usize },
    #[error("basis change is ill-conditioned (rcond {0:.3e})")]
    IllConditioned(f64),
    #[error("iteration did not converge after {0} steps")]
    NoConvergence(usize),
    #[error("stability not certified: {0}")]
    NotStable(String),
    #[error("no sampling period gives a consistent controllability index for output period {0}")]
    NoSamplingPeriod(f64),
    #[error("decay certificate unavailable: {0}")]
    CertificateUnavailable(String),
}

impl Error {
    /// True for failures of gain synthesis or certification, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::Dimension(_) | Error::Domain(_) | Error::NonFinite(_)
        )
    }
}
