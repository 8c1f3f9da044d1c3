use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("ill-posed parameters: {0}")]
    IllPosed(String),

    #[error("{divergent} of {n_paths} paths diverged (limit 0.1%)")]
    TooManyDivergent { divergent: usize, n_paths: usize },

    #[error("lambda condition fails: lambda - (2 mu + K1^2 + K2^2) = {margin}")]
    LambdaCondition { margin: f64 },

    #[error("BSDE solver diverged at t = {t}")]
    SolverDivergence { t: f64 },

    #[error("truncation ladder does not converge: distances {distances:?}")]
    ConvergenceFailure { horizons: Vec<f64>, distances: Vec<f64> },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
