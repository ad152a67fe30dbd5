use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("kernel of length {kernel} exceeds padded input of length {padded}")]
    KernelTooLarge { kernel: usize, padded: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("input of {len} samples is shorter than one frame ({frame} samples)")]
    TooShort { len: usize, frame: usize },

    #[error("empty waveform")]
    EmptyInput,

    #[error("invalid frequency range: {0}")]
    FrequencyRange(String),

    #[error("feature domain {domain}: {source}")]
    Domain {
        domain: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Data(String),

    #[error("{count} data error(s):\n{}", .errors.join("\n"))]
    Aggregate { count: usize, errors: Vec<String> },

    #[error("checkpoint profile `{checkpoint}` does not match dataset profile `{dataset}`")]
    ProfileMismatch { checkpoint: String, dataset: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("bad tensor container {path}: {reason}")]
    Container { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_domain(self, domain: &'static str) -> Self {
        Error::Domain {
            domain,
            source: Box::new(self),
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}
