use std::io;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("capacity error: requested {requested} sub-volumes but only {available} fit")]
    Capacity { requested: usize, available: usize },

    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("no percolating pore path along {0}")]
    NoFlow(String),

    #[error("solver did not converge after {iterations} iterations (flux change {flux_change:.3e}, max divergence {max_divergence:.3e})")]
    Convergence {
        iterations: usize,
        flux_change: f64,
        max_divergence: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Dimension(_) => "dimension",
            Error::Capacity { .. } => "capacity",
            Error::DegenerateHistogram(_) => "degenerate_histogram",
            Error::Range(_) => "range",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Format(_) => "format",
            Error::Checksum { .. } => "checksum",
            Error::Validation(_) => "validation",
            Error::NoFlow(_) => "no_flow",
            Error::Convergence { .. } => "convergence",
            Error::Degenerate(_) => "degenerate",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
