use thiserror::Error;

/// Errors raised anywhere in the refinement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("forward cache does not belong to this network state ({0})")]
    StaleCache(&'static str),

    #[error("non-finite gradient entry in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed PPM at byte {pos}: {msg}")]
    Ppm { pos: usize, msg: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("degenerate window: {0}")]
    DegenerateWindow(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("episode already terminated")]
    EpisodeTerminated,

    #[error("missing reference: {0}")]
    MissingReference(String),

    #[error("identity head is untrained")]
    Untrained,

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("search depth {0} exceeds the exhaustive search limit of 6")]
    SearchTooDeep(usize),

    #[error("toy MDP: {0}")]
    ToyMdp(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
