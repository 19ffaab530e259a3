use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid dimension {0}: qudit dimension must be at least 2")]
    InvalidDimension(u32),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: u32, right: u32 },

    #[error("duplicate wire label `{0}`")]
    DuplicateWire(String),

    #[error("wire `{0}` is not present in the state")]
    MissingWire(String),

    #[error("control and target are the same wire `{0}`")]
    SameWire(String),

    #[error("wire sets differ: {left:?} vs {right:?}")]
    IncompatibleWires { left: Vec<String>, right: Vec<String> },

    #[error("dit {value} out of range for dimension {dim}")]
    InvalidDit { value: u32, dim: u32 },

    #[error("wire `{0}` is not in a definite basis state")]
    IndefiniteWire(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("strategy order error: {0}")]
    StrategyOrder(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("round index {index} out of range 1..={rounds}")]
    IndexOutOfRange { index: usize, rounds: usize },

    #[error("inconsistent knowledge: {0}")]
    Inconsistent(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
