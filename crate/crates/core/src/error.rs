use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty manifest")]
    EmptyManifest,
    #[error("manifest line {line}: {message}")]
    ManifestLine { line: usize, message: String },
    #[error("duplicate triple id {0:?}")]
    DuplicateId(String),
    #[error("triple {id:?}: missing file {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("split {0:?} is empty")]
    EmptySplit(String),
    #[error("batch size must be at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },
    #[error("unsupported audio format in {path}: {message}")]
    AudioFormat { path: PathBuf, message: String },
    #[error("image error in {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("degenerate image: {height}x{width}")]
    DegenerateImage { height: usize, width: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: usize, right: usize },
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("truncated checkpoint")]
    TruncatedCheckpoint,
    #[error("checkpoint tensor {name:?}: {message}")]
    CheckpointShape { name: String, message: String },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("config hash mismatch: checkpoint has {checkpoint}, configuration has {config}")]
    ConfigHashMismatch { checkpoint: String, config: String },
    #[error("unknown scenario {0:?} (expected one of e-i, h-i, e-h, e-i-h, h-e-i-h)")]
    UnknownScenario(String),
    #[error("scenario requires modality {0} which was not supplied")]
    MissingModality(&'static str),
    #[error("epoch {epoch} out of range 1..={max}")]
    EpochOutOfRange { epoch: usize, max: usize },
    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("empty library")]
    EmptyLibrary,
    #[error("recall cutoff {k} is outside 1..={m}")]
    CutoffOutOfRange { k: usize, m: usize },
    #[error("unknown triple id {0:?}")]
    UnknownId(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
