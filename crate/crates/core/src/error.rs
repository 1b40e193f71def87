use thiserror::Error;

/// Errors surfaced by the numerical kernels.
///
/// The taxonomy separates bad inputs (`InvalidGrid`, `InvalidInput`,
/// `InvalidDensity`) from genuine numerical failures (`NonConvergence`,
/// `MonotonicityLoss`, `SmallnessViolated`, `OracleTooCoarse`) so that
/// callers can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("density violates its invariants: {0}")]
    InvalidDensity(String),

    /// Newton ran out of iterations. Usually means tau is too large for the
    /// requested tolerance, or the tolerance is below what the data supports.
    #[error("Newton did not converge after {iters} iterations (gradient norm {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },

    /// A monotone rearrangement could not be maintained; the input state is
    /// corrupted or the step produced a non-invertible map.
    #[error("monotonicity lost: {0}")]
    MonotonicityLoss(String),

    /// A stability precondition of the form 1 + c*tau > 0 (or similar) fails.
    #[error("smallness condition violated: {0}")]
    SmallnessViolated(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The reference solution cannot resolve the errors it is supposed to
    /// measure; rerun with a smaller reference time step.
    #[error("reference solution too coarse: {0}")]
    OracleTooCoarse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
