//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by field operations, solvers and pipelines.
#[derive(Debug, Error)]
pub enum MorphoError {
    /// The grid description itself is unusable (too few nodes, bad spacing).
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Two inputs that must share a grid do not.
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    /// An operation was called on data of the wrong dimension.
    #[error("operation `{op}` requires a {expected}D grid, got {found}D")]
    DimensionError {
        op: &'static str,
        expected: usize,
        found: usize,
    },

    /// A prescribed Jacobian target is not strictly positive.
    #[error("target Jacobian must be positive; found {value} at node {index}")]
    NonPositiveTarget { index: usize, value: f64 },

    /// An iterative solve stopped before reaching its tolerance.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    /// An operation that needs at least one input got none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// The Jacobian sum used for the correction targets is not positive.
    #[error("sum of Jacobian determinants is not positive at node {index} (value {value})")]
    SingularJacobianSum { index: usize, value: f64 },

    /// A synthetic generator was asked for a configuration it cannot realize.
    #[error("generator parameters out of range: {0}")]
    SpecOutOfRange(String),

    /// Any other invalid argument (negative amplitude, bad weights, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A failure inside a pipeline stage, annotated with where it happened.
    #[error("{context}: {source}")]
    Stage {
        context: String,
        #[source]
        source: Box<MorphoError>,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MorphoError {
    /// Wraps an error with a description of the pipeline stage that produced it.
    pub fn in_stage(self, context: impl Into<String>) -> Self {
        MorphoError::Stage {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, MorphoError>;
