//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants map onto the
//! failure families of the engine: shape and alignment problems, protocol
//! violations between roles, wire-format defects, data/schema issues and
//! configuration mistakes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Row sets or sample ids do not line up across tables or message parts.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// A caller-supplied argument violates the operation's contract.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A NaN or infinity appeared where only finite values are allowed.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An out-of-range index (embedding lookup, domain id, ...).
    #[error("index error: {0}")]
    Index(String),

    /// A round-protocol rule was broken (wrong phase, duplicate message, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Aggregation ran with a domain's cut message missing.
    #[error("straggler: domain {0} did not deliver its cut message")]
    Straggler(usize),

    /// A payload that must stay private crossed a role boundary.
    #[error("no-peek violation: {0}")]
    NoPeek(String),

    /// A frame does not follow the wire layout.
    #[error("frame format error: {0}")]
    Format(String),

    /// A frame ended before its declared length.
    #[error("incomplete frame: {0}")]
    Incomplete(String),

    /// Frame checksum mismatch.
    #[error("frame corruption: {0}")]
    Corruption(String),

    /// Declared tensor dimensions exceed the codec's limits.
    #[error("frame limit exceeded: {0}")]
    Limit(String),

    /// An input file does not match its expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell could not be parsed; `row` is the 1-based data row.
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    /// The data itself violates a precondition (labels, class counts, ids).
    #[error("data error: {0}")]
    Data(String),

    /// A row references an id that no side table defines.
    #[error("referential-integrity error: {0}")]
    Referential(String),

    /// An experiment configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
