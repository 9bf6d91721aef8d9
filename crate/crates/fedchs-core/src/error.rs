//! Error type shared by all simulator modules.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes surfaced by the simulator library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an API contract (dimension mismatch, bad argument
    /// range, inconsistent shapes, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numerical precondition required by a bound or schedule does not
    /// hold for the supplied inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A loss evaluation produced a non-finite value.
    #[error("non-finite evaluation at component {component}: {detail}")]
    NonFinite { component: usize, detail: String },

    /// A client shard was empty where at least one sample is required.
    #[error("empty shard for client {0}")]
    EmptyShard(usize),

    /// The partition sampler could not produce non-empty shards within its
    /// retry budget.
    #[error("partition infeasible after {retries} retries: {detail}")]
    PartitionInfeasible { retries: usize, detail: String },

    /// A linear system required by an exact solve was singular.
    #[error("singular linear system: {0}")]
    SingularSystem(String),

    /// The requested operation is not defined for the given loss model.
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    /// A text fixture (partition file, config file) failed to parse.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// Filesystem failure while reading or writing run outputs.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand used throughout the crate for contract violations.
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Shorthand for precondition failures.
    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
