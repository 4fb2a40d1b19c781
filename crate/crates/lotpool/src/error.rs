//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two parameter collections that must be aligned (same names, order,
    /// shapes) are not. The message names the first mismatching entry.
    #[error("misaligned parameter sets: {0}")]
    Misaligned(String),

    /// An argument fell outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A pruning step would leave no weights in the mask.
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    /// A file did not parse as the expected binary format.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// A checkpoint file parsed but failed its integrity checksum.
    #[error("corrupt data: {0}")]
    Corruption(String),

    /// A config file or CLI argument failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
