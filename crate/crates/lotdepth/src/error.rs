use thiserror::Error;

/// Errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed or truncated input file.
    #[error("format: {0}")]
    Format(String),

    /// Input values outside the mathematically valid domain
    /// (negative intensities, radii above 1, ...).
    #[error("domain: {0}")]
    Domain(String),

    /// Structurally valid input that the operation cannot work with
    /// (all-zero image, empty dataset, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Caller passed an argument violating a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative solver stopped before reaching its tolerance.
    /// `gap` is the residual it reports (duality gap or marginal error).
    #[error("no convergence in {context}: residual {gap:.3e} after {iterations} iterations")]
    NoConvergence {
        context: String,
        gap: f64,
        iterations: usize,
    },

    /// Floating point trouble that a different mode or parameter avoids.
    #[error("numerical: {0}")]
    Numerical(String),

    /// Serialized model cannot be used (wrong version, hash mismatch, ...).
    #[error("container: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, Error>;
