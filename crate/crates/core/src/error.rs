use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the model, filter, statistics and experiment layers.
#[derive(Debug, Error)]
pub enum FdiError {
    /// A value fell outside the domain where a model expression is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// Iterative solver did not reach its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// Covariance factorization failed even after jitter.
    #[error("covariance is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Filter estimate left the admissible state domain.
    #[error("filter diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    /// Linear solve refused because the matrix is singular or too ill-conditioned.
    #[error("ill-conditioned matrix {name} (condition estimate {condition:e})")]
    IllConditioned { name: &'static str, condition: f64 },

    /// A sensitivity column is identically zero.
    #[error("parameter {0} has an all-zero sensitivity column and is unidentifiable from this data")]
    DegenerateColumn(&'static str),

    /// Error raised inside one Monte Carlo replicate or simulation step.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<FdiError>,
    },
}

impl FdiError {
    pub fn domain(msg: impl Into<String>) -> Self {
        FdiError::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        FdiError::Config(msg.into())
    }

    /// Wraps the error with a human-readable context string.
    pub fn context(self, context: impl Into<String>) -> Self {
        FdiError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Returns the innermost error, skipping context wrappers.
    pub fn root(&self) -> &FdiError {
        match self {
            FdiError::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = FdiError> = std::result::Result<T, E>;
