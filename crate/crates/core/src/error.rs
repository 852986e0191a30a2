use thiserror::Error;

/// Errors raised by lattice primitives, operators and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DyadError {
    #[error("lattice mismatch: {0}")]
    DomainMismatch(String),

    #[error("level {level} outside lattice range [{min}, {max}]")]
    LevelOutOfRange { level: i32, min: i32, max: i32 },

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("cube at level {level} is a leaf; operation needs children")]
    LeafCube { level: i32 },

    #[error("lattice resolution insufficient: {0}")]
    InsufficientResolution(String),

    #[error("invalid shift: {0}")]
    InvalidShift(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("too many terms for exact enumeration: {count} > {max}")]
    EnumerationOverflow { count: usize, max: usize },

    #[error("lattice too large for dense assembly: {leaves} leaves > {max}")]
    SizeOverflow { leaves: usize, max: usize },

    #[error("sparse family check failed: {0}")]
    NotSparse(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, DyadError>;
