use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("probability vector is not normalised (sum = {0})")]
    NotNormalized(f64),
    #[error("token index {index} is outside the vocabulary of size {size}")]
    OutOfVocabulary { index: usize, size: usize },

    #[error("unknown act type `{0}`")]
    UnknownAct(String),
    #[error("unknown slot `{0}`")]
    UnknownSlot(String),
    #[error("invalid value for slot `{slot}`: {reason}")]
    InvalidValue { slot: String, reason: String },
    #[error("value for slot `{slot}` not found in text")]
    MissingValue { slot: String },
    #[error("values of slots `{first}` and `{second}` overlap in the text")]
    Overlap { first: String, second: String },
    #[error("slot token `{0}` has no value in the dialogue act")]
    UnboundSlot(String),
    #[error("cannot encode dialogue act: {0}")]
    Encoding(String),
    #[error("no target slot of class {0} is available")]
    EmptyClass(crate::da::SlotClass),
    #[error("inconsistent instance: {0}")]
    Inconsistent(String),
    #[error("cannot parse dialogue act `{input}`: {reason}")]
    DaSyntax { input: String, reason: String },

    #[error("no candidates survived generation")]
    NoCandidates,
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
