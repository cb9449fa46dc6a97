//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by tensor ops, retrieval, training and persistence.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands had incompatible shapes.
    #[error("shape mismatch in {op}: left is {left}, right is {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    /// An operation received an empty input it cannot define a result for.
    #[error("{op}: input is empty")]
    EmptyInput { op: &'static str },

    /// An index or count was outside its valid range.
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// A vector that must have positive norm was zero.
    #[error("{op}: vector has zero norm")]
    ZeroNorm { op: &'static str },

    /// A non-finite value appeared during a forward or backward pass.
    #[error("non-finite value encountered in layer `{layer}`")]
    NonFinite { layer: &'static str },

    /// Training loss became NaN.
    #[error("training diverged: loss is NaN at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    /// Nearest-neighbour query asked for more neighbours than exist.
    #[error("knn: k={k} must be smaller than the number of stored points n={n}")]
    KTooLarge { k: usize, n: usize },

    /// Clustering asked for more clusters than points.
    #[error("cluster_quantize: n={n} points cannot form {n_clusters} clusters")]
    TooFewPoints { n: usize, n_clusters: usize },

    /// Opposing-exemplar selection found nothing at any cluster rank.
    #[error("pick_opposing: no eligible ids at any cluster rank")]
    NoEligibleIds,

    /// Quintuplet selection needs a larger neighbour pool.
    #[error("pick_quintuplet: pool of {available} neighbours is too small (need {needed})")]
    PoolTooSmall { available: usize, needed: usize },

    /// Container file does not start with the expected magic bytes.
    #[error("bad magic: expected \"DFA1\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    /// Container version is not supported.
    #[error("unsupported container version {found} (supported: {supported})")]
    BadVersion { found: u32, supported: u32 },

    /// Container record type does not match what the caller asked to load.
    #[error("record type mismatch: expected {expected}, found {found}")]
    BadRecordType { expected: u32, found: u32 },

    /// File ended before the declared payload was read.
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },

    /// A stored shape disagrees with the payload that follows it.
    #[error("corrupt payload: {msg}")]
    CorruptPayload { msg: String },

    /// Underlying file I/O failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Synthetic generation produced data violating its planted-structure check.
    #[error("planted structure violated: within-concept distance {within:.4} >= across-concept distance {across:.4}")]
    PlantedStructure { within: f64, across: f64 },
}

impl Error {
    /// True for errors that indicate an internal numeric failure rather
    /// than bad input; the CLI maps these to a distinct exit code.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}
