use std::io;

use thiserror::Error;

use crate::linalg::SquareMatrix;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Diagnostics carried by [`Error::SingularWitnessMatrix`]: every witness
/// matrix that was tried, with its smallest singular value.
#[derive(Debug, Clone)]
pub struct SingularWitness {
    pub matrices: Vec<SquareMatrix>,
    pub sigma_n: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient mass: requested {requested}, available {available}")]
    InsufficientMass { requested: f64, available: f64 },

    #[error("matrix is numerically singular ({0})")]
    Singular(String),

    #[error("singular value iteration did not converge after {sweeps} sweeps")]
    Convergence { sweeps: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("witness matrix is singular under every partition tried (sigma_n = {:?})", .0.sigma_n)]
    SingularWitnessMatrix(Box<SingularWitness>),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
