use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no truncation has exactly {target} modes; nearest achievable sizes are {below:?} and {above}")]
    NoExactTruncation { target: usize, below: Option<usize>, above: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("innovation covariance is not positive definite at step {step}")]
    SingularInnovation { step: usize },

    #[error("matrix is not Hurwitz stable: eigenvalue {re} + {im}i")]
    Unstable { re: f64, im: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { what: &'static str, iterations: usize, residual: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numerical failures map to exit code 2, everything else to 1.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularInnovation { .. }
                | Error::Unstable { .. }
                | Error::NoConvergence { .. }
                | Error::NonFinite(_)
        )
    }
}
