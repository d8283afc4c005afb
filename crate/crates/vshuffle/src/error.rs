use crate::tensor::Shape;

/// Errors produced by tensor ops, network construction and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Shape, got: Shape },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("{channels} channels not divisible into {groups} groups")]
    Divisibility { channels: usize, groups: usize },

    #[error("invalid shift fraction: {0}")]
    InvalidFraction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("out of memory allocating {0} elements")]
    OutOfMemory(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
