use thiserror::Error;
use voicelink_autodiff::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("note {0} has no voice label")]
    MissingVoice(String),
    #[error("voice {voice} has two notes starting at tick {onset}; run monophonic preprocessing first")]
    NotMonophonic { voice: u32, onset: u64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("node {node} has {count} {direction} links; resolve conflicts before extracting voices")]
    Degree {
        node: String,
        direction: &'static str,
        count: usize,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch} on piece {piece}: {message}")]
    TrainingDiverged {
        epoch: usize,
        piece: String,
        message: String,
    },
    #[error("output too large: {0}")]
    Size(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
