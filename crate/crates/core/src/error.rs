//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by dataset handling, transport solvers and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Two objects that must agree in shape do not.
    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A weight vector fails the probability-simplex requirements.
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    /// An input violates the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A solver produced NaN/Inf and cannot continue.
    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: &'static str, detail: String },

    /// Instance exceeds the configured size cap of the exact solver.
    #[error("instance too large for exact solver: {rows}x{cols} exceeds cap of {cap} cells")]
    ExactSizeCap { rows: usize, cols: usize, cap: usize },

    /// A required input collection is empty.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Requested file does not exist.
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    /// CSV file contains no data rows.
    #[error("CSV file has no data rows: {0}")]
    EmptyCsv(PathBuf),

    /// A CSV cell expected to be numeric could not be parsed.
    #[error("non-numeric value {value:?} in column {column:?} at data row {row}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    /// A named CSV column is absent.
    #[error("column {0:?} not found in CSV header")]
    MissingColumn(String),

    /// Malformed CSV structure (ragged rows, encoding, I/O during parse).
    #[error("CSV parse error: {0}")]
    Csv(#[from] csv::Error),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Checkpoint bytes do not match the expected layout.
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    /// Training aborted because the loss became non-finite.
    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
