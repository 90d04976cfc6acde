//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes cannot be combined under the supported broadcast rules.
    #[error("broadcast error: {0}")]
    Broadcast(String),

    /// Tensor shapes are inconsistent with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// An input lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An index points outside the addressed buffer.
    #[error("index error: {0}")]
    Index(String),

    /// A coarse-grain mapping violates its invariants.
    #[error("invalid mapping: {0}")]
    InvalidMapping(String),

    /// The transform matrix is not orthogonal.
    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    /// Coordinates are degenerate (coincident or collinear points).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// An element symbol is missing from the covalent-radius table.
    #[error("unknown element: {0}")]
    UnknownElement(String),

    /// A bead holds more atoms than there are vector channels.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// A configuration value is missing, malformed, or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// The training loss became non-finite.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// Every generated sample was rejected by the graph-validity filter.
    #[error("no valid samples: {0}")]
    NoValidSamples(String),

    /// A text input could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// The conformer generator failed to produce frames.
    #[error("generator error: {0}")]
    Generator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}
