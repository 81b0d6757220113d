use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("soil water capacity vanishes at node {node} (h = {head})")]
    SingularCapacity { node: usize, head: f64 },

    #[error("non-finite value in {context}")]
    NumericalBlowup { context: String },

    #[error("semilinear factorization undefined: state component {node} is zero")]
    FactorizationUndefined { node: usize },

    #[error("cost weight undefined: state component {node} is zero")]
    UndefinedWeight { node: usize },

    #[error("no stabilizing Riccati solution (closed-loop spectral abscissa {spectral_abscissa:e})")]
    Stabilizability {
        spectral_abscissa: f64,
        /// Real and imaginary parts of the closed-loop eigenvalues.
        spectrum: Vec<(f64, f64)>,
    },

    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("state left the unsaturated regime at t = {t} (node {node}, h = {head})")]
    Inadmissible { t: f64, node: usize, head: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} must be finite, got {value}")))
    }
}
