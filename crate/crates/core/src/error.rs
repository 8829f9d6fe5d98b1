use thiserror::Error;

/// Errors surfaced by the simulator core.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Dimensions of an input, parameter set, or packet do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value-level precondition failed (non-finite input, label out of
    /// range, empty batch, unparsable cell).
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration violates its invariants.
    #[error("invalid config: {0}")]
    Config(String),

    /// An operation was called out of order (e.g. backward without forward).
    #[error("state error: {0}")]
    State(String),

    /// A CSV schema references columns that do not exist.
    #[error("schema error: {0}")]
    Schema(String),

    /// Partitioning could not satisfy the per-device minimums.
    #[error("partition failed: {0}")]
    Partition(String),

    /// Parameters or losses left the finite range.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
