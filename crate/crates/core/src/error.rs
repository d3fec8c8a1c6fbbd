use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("scene {scene_id}: malformed JSON: {message}")]
    Parse { scene_id: String, message: String },

    #[error("scene {scene_id}: schema error at `{field}`: {message}")]
    Schema {
        scene_id: String,
        field: String,
        message: String,
    },

    #[error("scene {scene_id}: invariant violated at `{field}`: {message}")]
    Invariant {
        scene_id: String,
        field: String,
        message: String,
    },

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("scene {scene_id}: unknown agent `{agent_id}`")]
    UnknownAgent { scene_id: String, agent_id: String },

    #[error("scene {scene_id}: agent `{agent_id}` is not a prediction target")]
    NotATarget { scene_id: String, agent_id: String },

    #[error("cache format error: {0}")]
    Format(String),

    #[error("cache corruption: {0}")]
    Corruption(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no valid timesteps")]
    NoValidSteps,

    #[error("empty sample set")]
    EmptySet,

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no prediction for target {scene_id}/{agent_id}")]
    MissingPrediction { scene_id: String, agent_id: String },

    #[error("prediction refers to unknown target {scene_id}/{agent_id}")]
    UnknownTarget { scene_id: String, agent_id: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
            Error::Invariant { .. } => "invariant",
            Error::DegenerateFrame(_) => "degenerate_frame",
            Error::UnknownAgent { .. } => "unknown_agent",
            Error::NotATarget { .. } => "not_a_target",
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NoValidSteps => "no_valid_steps",
            Error::EmptySet => "empty_set",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidConfig(_) => "invalid_config",
            Error::MissingPrediction { .. } => "missing_prediction",
            Error::UnknownTarget { .. } => "unknown_target",
        }
    }
}
