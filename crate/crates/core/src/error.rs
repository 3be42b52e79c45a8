//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes disagree for an operation; names the offending axes.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An operation needed a scalar (or a specific rank) and got something else.
    #[error("rank error in {op}: {detail}")]
    Rank { op: &'static str, detail: String },

    /// A vector norm required to be nonzero was (numerically) zero.
    #[error("degenerate norm in {op}: {detail}")]
    DegenerateNorm { op: &'static str, detail: String },

    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// Prompt out of bounds, empty mask, or otherwise unusable.
    #[error("prompt error: {0}")]
    Prompt(String),

    /// Synthetic scene objects could not be placed disjointly.
    #[error("placement error: {0}")]
    Placement(String),

    /// Image too small for a windowed operation, or indivisible dimensions.
    #[error("size error in {op}: {detail}")]
    Size { op: &'static str, detail: String },

    /// Malformed PPM/PGM input.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
