//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The mass matrix failed its positive-definiteness check.
    #[error("mass matrix is not positive definite at q = {q:?}")]
    DegenerateMetric { q: Vec<f64> },

    /// Newton inversion of the optimality condition did not converge.
    #[error("optimality inversion failed after {iterations} iterations (residual {residual:.3e})")]
    InversionFailure { iterations: usize, residual: f64 },

    /// A state component became non-finite during integration.
    #[error("integration produced a non-finite state at step {step} (t = {time:.6})")]
    NonFiniteState { step: usize, time: f64 },

    /// The shooting iteration exhausted its iteration budget.
    #[error("shooting did not converge in {iterations} iterations (best residual {residual:.3e})")]
    ShootingDidNotConverge { iterations: usize, residual: f64 },

    /// Integration blew up inside a Newton iteration of the shooting solver.
    #[error("integration aborted during shooting iteration {newton_iteration}: {source}")]
    ShootingIntegration {
        newton_iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// A linear solve inside a Newton step failed (singular Jacobian).
    #[error("singular Jacobian in Newton step {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("dimension mismatch: expected {expected}, got {got} for {what}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
