//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("interpolation centers contain duplicate columns ({i}, {j})")]
    DuplicateCenters { i: usize, j: usize },

    #[error("kernel Gram matrix is numerically singular; use a regularization gamma > 0")]
    SingularGram,

    #[error("centers are degenerate: Gram matrix not invertible within pseudo-inverse tolerance")]
    DegenerateCenters,

    #[error("training data degenerate: all reduced snapshot columns are duplicates")]
    DegenerateData,

    #[error("trajectory is degenerate: zero denominator in relative error metric")]
    DegenerateTrajectory,

    #[error("time integration failed at step {step}: Newton did not converge in {max_newton} iterations")]
    IntegrationFailure { step: usize, max_newton: usize },

    #[error("no viable regularization: every candidate failed to produce a stable ROM")]
    NoViableRegularization,

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("matrix file error in {path}: {message}")]
    MatrixFile { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
