//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on shape. Both shapes are named so the
    /// offending call site can be reconstructed from the message alone.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// A value failed a finiteness or domain check.
    #[error("invalid value in {op}: {reason}")]
    InvalidValue { op: &'static str, reason: String },

    /// L2 normalization of a vector whose norm is below 1e-12.
    #[error("degenerate vector: norm {norm:.3e} below 1e-12")]
    DegenerateVector { norm: f64 },

    /// A module was driven with an incompatible configuration
    /// (wrong gate head, invalid ratio, mismatched calculator/head).
    #[error("configuration error: {0}")]
    Config(String),

    /// Function evaluation during gradient checking produced a
    /// non-finite value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Frame set with no valid (masked-in) frames.
    #[error("empty mask: at least one frame must be masked in")]
    EmptyMask,

    /// Contrastive temperature must be strictly positive.
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    /// A retrieval query has no ground-truth column.
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),

    /// Sequence longer than the learned position table.
    #[error("sequence length {len} exceeds position table of {max} rows")]
    PositionOverflow { len: usize, max: usize },

    /// Weight dump requested on a calculator without any gate.
    #[error("no gates: calculator {0} has no gate stages to dump")]
    NoGates(String),

    /// Training aborted on a non-finite loss.
    #[error("non-finite loss at step {step}: {value}")]
    NonFiniteLoss { step: usize, value: f64 },

    /// Malformed FEAT file or checkpoint payload.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
