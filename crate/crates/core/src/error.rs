use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("signal has zero energy: {0}")]
    ZeroEnergySignal(&'static str),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("input too short: {got} samples, need at least {need}")]
    InputTooShort { got: usize, need: usize },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("manifest contains no usable entries")]
    EmptyManifest,
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid layer-weight scheme: {0}")]
    InvalidScheme(String),
    #[error("layer index {index} out of range for {n_layers} layers")]
    IndexOutOfRange { index: usize, n_layers: usize },
    #[error("unsupported model format: {0}")]
    UnsupportedModel(String),
    #[error("adapter contract violation: {0}")]
    ContractViolation(String),
    #[error("observation-adding ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("estimate energy {0:e} is below the denominator guard")]
    ZeroEnergyEstimate(f64),
    #[error("token sequence rejected: {0}")]
    Vocabulary(String),
    #[error("development loss is not finite: {0}")]
    NonFiniteDevLoss(f64),
    #[error("dataset is empty: {0}")]
    EmptyDataset(&'static str),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("reference signal is all zeros")]
    ZeroReference,
    #[error("report has no rows")]
    EmptyReport,
    #[error("external scorer failed: {0}")]
    Scorer(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input or configuration rather than the
    /// environment or numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::InvalidScheme(_)
                | Error::IndexOutOfRange { .. }
                | Error::EmptyManifest
                | Error::EmptyDataset(_)
                | Error::RatioOutOfRange(_)
                | Error::UnsupportedModel(_)
                | Error::ContractViolation(_)
                | Error::CheckpointFormat(_)
                | Error::Vocabulary(_)
        )
    }
}
