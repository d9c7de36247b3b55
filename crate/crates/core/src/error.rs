//! Error type shared across the crate.

/// Errors reported by estimation, distribution, and simulation routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input fails a precondition (bad sample size, mismatched lengths, ...).
    #[error("invalid input: {0}")]
    Validation(String),

    /// A study contributes no usable information (zero spread, missing arms).
    #[error("degenerate study: {0}")]
    DegenerateStudy(String),

    /// Fewer than two studies; nothing between-study to estimate.
    #[error("need at least 2 studies, got {k}")]
    TooFewStudies { k: usize },

    /// The caller asked for an unsupported combination of options.
    #[error("usage: {0}")]
    Usage(String),

    /// The mixture series did not reach the requested accuracy.
    #[error("series did not converge after {terms} terms (remainder bound {remainder:.3e})")]
    SeriesNonConvergence { terms: usize, remainder: f64 },

    /// An iterative solver ran out of iterations.
    #[error("iteration stopped after {iterations} steps without converging (last value {last:.6e})")]
    NonConvergence { iterations: u32, last: f64 },

    /// Any other numeric failure (eigen solver, impossible bracket, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Problems with a simulation configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Requested data slice does not exist (plotting, resume).
    #[error("no data: {0}")]
    NoData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
