use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside the admissible range {range}")]
    Domain { what: &'static str, value: f64, range: &'static str },

    #[error("density and score are undefined at forward time s = {s} (delta atoms)")]
    DegenerateTime { s: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("centering/normalization did not converge after {iterations} iterations (residual {residual:e})")]
    Normalization { iterations: usize, residual: f64 },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("covariance is not positive definite even after jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("sampler diverged at step {step}: non-finite state")]
    Diverged { step: usize },

    #[error("arity error: {0}")]
    Arity(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Failures of the numerics themselves, as opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateTime { .. }
                | Error::DegenerateInput(_)
                | Error::Normalization { .. }
                | Error::Factorization { .. }
                | Error::Diverged { .. }
        )
    }
}
