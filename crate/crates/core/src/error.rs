use thiserror::Error;

/// Errors raised by solvers, decompositions and instance I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal {signal} has zero marginal probability")]
    ZeroMassSignal { signal: usize },

    #[error("enumeration of {what} would visit {count} items, above the cap of {cap}")]
    ExplosionGuard { what: &'static str, count: f64, cap: f64 },

    #[error("method requires limited liability (all budgets zero)")]
    NotLimitedLiability,

    #[error("target posterior is not in the convex hull of its grid neighbourhood")]
    InfeasibleDecomposition,

    #[error("degenerate LP solution: {0}")]
    DegenerateSolution(String),

    #[error("LP backend could not certify a status: {0}")]
    NumericalFailure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
