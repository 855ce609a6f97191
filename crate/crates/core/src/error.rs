//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A line of an input file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An operation that needs at least one interaction got none.
    #[error("empty dataset: no interactions found")]
    EmptyDataset,

    /// Leave-latest-out cannot split a user with a single interaction: removing
    /// it would leave the user absent from the training set.
    #[error("user {raw_user} has a single interaction and cannot be split")]
    SingleInteraction { raw_user: u64 },

    /// A sample was requested that is larger than the population.
    #[error("requested sample of {requested} from only {available} interactions")]
    SampleTooLarge { requested: usize, available: usize },

    /// An interaction refers to a user or item outside the model's shape.
    #[error("{entity} index {index} out of bounds for size {size}")]
    IndexOutOfBounds {
        entity: &'static str,
        index: usize,
        size: usize,
    },

    /// Two structures that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A configuration value violates its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A variance argument must be strictly positive.
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    /// Training produced a non-finite objective or parameter.
    #[error("training diverged at {unit} {at} ({detail}); try reducing the step size")]
    Diverged {
        unit: &'static str,
        at: u64,
        detail: String,
    },

    /// A checkpoint or report file had the wrong structure.
    #[error("malformed file {path}: {message}")]
    MalformedFile { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
