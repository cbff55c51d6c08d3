use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error(
        "room dimension along {axis} ({room} m) is not a multiple of the cluster size {cluster} m \
         (remainder {remainder} m)"
    )]
    NotDivisible {
        axis: char,
        room: f64,
        cluster: f64,
        remainder: f64,
    },

    #[error("point ({:.4}, {:.4}, {:.4}) lies outside the room", .0[0], .0[1], .0[2])]
    OutsideRoom(Vec3),

    #[error("cluster index {index} out of range (K = {k})")]
    ClusterIndex { index: usize, k: usize },

    #[error("direction of arrival is undefined for a point at the array center")]
    UndefinedDoa,

    #[error("source and microphone coincide")]
    CoincidentSourceMic,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("unsupported wav encoding: {0}")]
    UnsupportedWav(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("model mismatch on {field}: model has {model}, input has {input}")]
    ModelMismatch {
        field: &'static str,
        model: String,
        input: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Short stable identifier used in single-line CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid { .. } => "invalid",
            Error::NotDivisible { .. } => "not-divisible",
            Error::OutsideRoom(_) => "outside-room",
            Error::ClusterIndex { .. } => "cluster-index",
            Error::UndefinedDoa => "undefined-doa",
            Error::CoincidentSourceMic => "coincident",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::SampleRateMismatch { .. } => "sample-rate",
            Error::Wav(_) | Error::UnsupportedWav(_) => "wav",
            Error::ModelFormat(_) => "model-format",
            Error::ModelMismatch { .. } => "model-mismatch",
            Error::Config(_) => "config",
            Error::Context { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
