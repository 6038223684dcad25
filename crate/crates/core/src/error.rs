use thiserror::Error;

/// Errors raised by the analytic and simulation pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("block dimension mismatch: {0}")]
    Dimension(String),

    #[error("not positive recurrent or tolerance unreachable after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("boundary system degenerate: {0}")]
    DegenerateBoundary(String),

    #[error("irreducibility violated: {0}")]
    Reducible(String),

    #[error("coupled system unstable at these rates: node {node} has drift {mu:e}")]
    Unstable { node: usize, mu: f64 },

    #[error("coupled fixed point did not converge after {iterations} outer iterations (max |dz| = {delta:e})")]
    CouplingNotConverged { iterations: usize, delta: f64 },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) | Error::Json(_) => 2,
            Error::NotConverged { .. }
            | Error::DegenerateBoundary(_)
            | Error::Reducible(_)
            | Error::Unstable { .. }
            | Error::CouplingNotConverged { .. } => 3,
            Error::Verification(_) => 4,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
