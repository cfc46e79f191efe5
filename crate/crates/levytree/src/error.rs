use thiserror::Error;

/// Errors produced by model construction, simulation and estimation.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A model parameter is outside its admissible range.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An operation argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested quantity cannot be decided on a truncated tree.
    #[error("indeterminate on truncated tree: {0}")]
    Truncated(String),

    /// A path does not satisfy the preconditions of the contour machinery.
    #[error("bad path: {0}")]
    BadPath(String),

    /// A Monte Carlo routine refuses to start because its predicted cost
    /// or acceptance rate is out of bounds.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An iterative scheme failed to converge within its cap.
    #[error("no convergence: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
