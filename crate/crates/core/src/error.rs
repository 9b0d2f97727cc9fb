//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LuqError {
    /// Two grid densities do not share the same geometry.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// An operation was requested for a generator that lacks the required
    /// smoothness (e.g. total variation has no second derivative and no
    /// smooth conjugate).
    #[error("capability error: {0}")]
    Capability(String),

    /// A parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A divergence needed by the operation is infinite (absolute-continuity
    /// failure at grid resolution).
    #[error("divergence is infinite: {0}")]
    InfiniteDivergence(String),

    /// Explicit time stepping would be unstable at the requested step.
    #[error("stability violation: dt = {dt} exceeds the explicit bound; required dt <= {required}")]
    Stability { dt: f64, required: f64 },

    /// A trajectory or solver state became non-finite.
    #[error("non-finite state: {0}")]
    NonFinite(String),

    /// A value lies outside the range of an invertible map.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Not enough data to carry out the operation (snapshots, samples, nodes).
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, LuqError>;
