//! Error type shared across the library.

use thiserror::Error;

/// Everything that can go wrong while building environments, running
/// solvers, or driving experiments.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or operation received parameters outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A summability or moment condition required by the requested quantity
    /// fails for the supplied parameters.
    #[error("moment condition violated: {0}")]
    MomentCondition(String),

    /// Environment generation produced a disconnected rate graph and the
    /// model does not allow one.
    #[error("rate graph disconnected after {attempts} attempts")]
    Disconnected {
        /// Number of reject-and-resample rounds performed.
        attempts: u32,
    },

    /// A position was queried that carries no atom.
    #[error("no atom at the requested position")]
    NotAnAtom,

    /// An iterative solver failed to reach its tolerance.
    #[error("solver failed: {context} (residual {residual:.3e} after {iterations} iterations)")]
    SolverFailure {
        /// What was being solved.
        context: String,
        /// Relative residual at the final iterate.
        residual: f64,
        /// Iterations performed before giving up.
        iterations: usize,
    },

    /// A quadrature rule cannot certify the requested tolerance.
    #[error("quadrature order insufficient: {0}")]
    QuadratureOrder(String),

    /// A truncation radius satisfying the documented tail target could not
    /// be certified for the supplied envelope.
    #[error("envelope tail target unattainable: {0}")]
    EnvelopeTail(String),

    /// A field was evaluated outside the box on which it is stored.
    #[error("field evaluated outside its stored box: {0}")]
    FieldDomain(String),

    /// Configuration file failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// Serialized environment data failed to parse or validate.
    #[error("environment format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
