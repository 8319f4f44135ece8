use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {got} samples, need at least {need}")]
    EmptyInput { got: usize, need: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label sequence needs at least {min_frames} frames, got {frames}")]
    InfeasibleAlignment { frames: usize, min_frames: usize },

    #[error("enumeration oracle limits exceeded: {0}")]
    OracleTooLarge(String),

    #[error("keyword is empty")]
    EmptyKeyword,

    #[error("unsupported character {ch:?} in {context:?}")]
    UnsupportedCharacter { ch: char, context: String },

    #[error("invalid label sequence: {0}")]
    InvalidLabels(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("training diverged at update {update}: loss {loss}")]
    Diverged { update: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
