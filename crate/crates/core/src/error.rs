//! Error type shared by every module of the toolkit.

use thiserror::Error;

/// Errors produced by shape arithmetic, execution, statistics and
/// design-space exploration.
#[derive(Debug, Error)]
pub enum Error {
    /// The output-extent formula `s*(i-1)+k-2p` produced a value below 1.
    #[error("output extent {extent} is not positive (input {input}, stride {stride}, kernel {kernel}, padding {padding})")]
    NonPositiveOutput {
        extent: i64,
        input: usize,
        stride: usize,
        kernel: usize,
        padding: usize,
    },

    /// A layer, tensor or weight dimension does not match what the
    /// operation requires.
    #[error("shape mismatch: {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// Layer configuration violates a structural invariant.
    #[error("invalid layer: {0}")]
    InvalidLayer(String),

    /// Tile factors fall outside the layer's output/input bounds.
    #[error("invalid tile: {0}")]
    InvalidTile(String),

    /// The gather index `(o + p - k) / s` is not an integer. Callers that
    /// enumerate coordinates through stride offsets never trigger this.
    #[error("non-integer input index: ({output} + {padding} - {kernel_index}) is not divisible by stride {stride}")]
    NonIntegerIndex {
        output: usize,
        padding: usize,
        kernel_index: usize,
        stride: usize,
    },

    /// A required weight tensor is absent from the store.
    #[error("missing weight: layer {layer} role {role}")]
    MissingWeight { layer: usize, role: String },

    /// Two sample rows (or sample sets) have different column counts.
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    /// An estimator needs more rows than it was given.
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    /// All pairwise distances are zero; no bandwidth can be derived.
    #[error("degenerate samples: all pairwise distances are zero")]
    DegenerateSamples,

    /// The variance of the test-statistic difference collapsed below the
    /// floor while the numerator is nonzero.
    #[error("degenerate variance: denominator {denominator} below floor {floor}")]
    DegenerateVariance { denominator: f64, floor: f64 },

    /// Exact-mode trip counts require the tile factors to divide the layer
    /// dimensions (and the tile to span full output rows).
    #[error("indivisible tiling: {0}")]
    IndivisibleTiling(String),

    /// Every enumerated design point violates at least one constraint.
    #[error("no feasible design point")]
    NoFeasibleDesign,

    /// Malformed serialized input (network description, weights, samples).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
