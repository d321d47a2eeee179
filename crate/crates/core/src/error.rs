use thiserror::Error;

/// Errors raised by the numerical core and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("alpha_bar must lie in (0, 1], got {0}")]
    AlphaBarOutOfRange(f64),
    #[error("timestep {t} is outside 1..={total}")]
    InvalidTimestep { t: usize, total: usize },
    #[error("timesteps ({t_prev}, {t}) are not adjacent in the sampling subsequence")]
    NonAdjacentTimesteps { t: usize, t_prev: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("component index {index} out of range for {count} components")]
    ComponentOutOfRange { index: usize, count: usize },
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("invalid guidance scale {0}")]
    InvalidGuidance(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite latent entry at index {0}")]
    NonFinite(usize),
    #[error("zero vector where a direction is required")]
    ZeroVector,
    #[error("degenerate centroid: mean direction vanishes")]
    DegenerateCentroid,
    #[error("empty seed set")]
    EmptySeedSet,
    #[error("invalid codec: {0}")]
    InvalidCodec(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
