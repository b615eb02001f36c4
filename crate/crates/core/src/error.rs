use alloc::string::String;
use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An attribution map or measure has zero total mass.
    #[error("zero total mass: cannot normalize a degenerate attribution")]
    ZeroMass,

    #[error("region {what} out of bounds for a {height}x{width} grid")]
    OutOfBounds {
        what: &'static str,
        height: usize,
        width: usize,
    },

    #[error("degenerate statistic: std for channel {channel} is {value}")]
    DegenerateStat { channel: usize, value: f64 },

    /// Malformed raster bytes.
    #[error("format error: {0}")]
    Format(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("backward target must be scalar, got {len} elements")]
    NotScalar { len: usize },

    #[error("no convergence after {iterations} iterations (violation {violation:e})")]
    NonConvergence { iterations: usize, violation: f64 },

    #[error("numerical underflow: {0}")]
    NumericalUnderflow(String),

    #[error("problem too large: {cells} cells exceeds cap {cap}")]
    Size { cells: usize, cap: usize },

    #[error("channel {channel} out of range for {channels} channels")]
    Channel { channel: usize, channels: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("every cell is masked; nothing to impute from")]
    AllMasked,

    /// Inputs outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
