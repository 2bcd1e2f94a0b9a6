use thiserror::Error;

use crate::geometry::Point;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("projection onto the boundary did not converge (last iterate {last:?}, residual {residual:e})")]
    ProjectionFailed { last: Point, residual: f64 },

    #[error("point {point:?} is not within {tol:e} of the boundary (distance {distance:e})")]
    NotOnBoundary { point: Point, distance: f64, tol: f64 },

    #[error("degenerate normal at {0:?}")]
    DegenerateNormal(Point),

    #[error("collar inclusion {inclusion} fails at sample point {witness:?}")]
    CollarInclusion { inclusion: &'static str, witness: Point },

    #[error("node {0} is not an interior node")]
    NotInterior(usize),

    #[error("point {0:?} lies outside the data band of the grid function")]
    OutsideDataBand(Point),

    #[error("quadrature reach {reach} is smaller than the required {required}")]
    ReachTooSmall { reach: f64, required: f64 },

    #[error("adaptive quadrature failed to reach tolerance (estimate {estimate:e}, error {error:e})")]
    QuadratureFailed { estimate: f64, error: f64 },

    #[error("estimated memory {bytes} bytes exceeds the cap of {cap} bytes; use a coarser grid")]
    MemoryCap { bytes: usize, cap: usize },

    #[error("linear solve did not converge after {iterations} iterations (residual history tail {history:?})")]
    NoConvergence { iterations: usize, history: Vec<f64> },

    #[error("semilinear iteration diverged at step {iteration} (sup norm {sup:e})")]
    Divergence { iteration: usize, sup: f64 },

    #[error("policy iteration cycled after {sweeps} sweeps; last policy changes {trace:?}")]
    PolicyCycle { sweeps: usize, trace: Vec<usize> },

    #[error("solution is not positive in the interior (min {min:e} at {at:?})")]
    NotPositive { min: f64, at: Point },

    #[error("region is empty: {0}")]
    EmptyRegion(&'static str),

    #[error("kernel does not satisfy hypothesis: {0}")]
    KernelHypothesis(&'static str),

    #[error("region is not contained in the half-space {0}")]
    RegionOutsideHalfSpace(String),

    #[error("singular pivot at row {0} in the preconditioner factorization")]
    SingularPivot(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
