use std::path::PathBuf;

/// Errors produced anywhere in the extractor, training and scoring stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("{op}: kernel size must be odd, got {kernel}")]
    EvenKernel { op: &'static str, kernel: usize },
    #[error("{0}: time axis is empty")]
    EmptyTime(&'static str),
    #[error("{0}: zero-norm vector")]
    ZeroNorm(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate cohort: {0}")]
    DegenerateCohort(String),
    #[error("trial set needs at least one target and one nontarget score (got {targets} / {nontargets})")]
    MissingTrials { targets: usize, nontargets: usize },
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    SampleRate(u32),
    #[error("recording too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, got: &[usize]) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            got: got.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short stable tag used in the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::EvenKernel { .. } => "even_kernel",
            Error::EmptyTime(_) => "empty_time",
            Error::ZeroNorm(_) => "zero_norm",
            Error::Config(_) => "config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DegenerateCohort(_) => "degenerate_cohort",
            Error::MissingTrials { .. } => "missing_trials",
            Error::UnknownId(_) => "unknown_id",
            Error::SampleRate(_) => "sample_rate",
            Error::TooShort { .. } => "too_short",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Wav { .. } => "wav",
        }
    }
}
