use thiserror::Error;

/// Errors produced by fitting, smoothing and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The 2x2 kernel-weighted design matrix at `center` is (numerically) singular.
    #[error("singular local design at a = {center} (bandwidth too small or empty kernel window)")]
    SingularDesign { center: f64 },
    #[error("iteratively reweighted least squares did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("value outside its domain: {0}")]
    DomainError(String),
    #[error("estimated scale {value} is degenerate")]
    DegenerateScale { value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{failed} of {total} replications failed (limit is 2%)")]
    TooManyFailures { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
