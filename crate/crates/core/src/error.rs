use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("could not place object {object} of {requested} on a {width}x{height} canvas")]
    Placement {
        object: usize,
        requested: usize,
        width: u32,
        height: u32,
    },

    #[error("bounding box {0:?} is degenerate or outside a {1}x{2} image")]
    BoxOutOfBounds([f64; 4], u32, u32),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite loss at epoch {epoch}, example {example}")]
    NonFiniteLoss { epoch: usize, example: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("query is empty after tokenization")]
    EmptyQuery,

    #[error("no candidates to rank")]
    NoCandidates,

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported model bundle: {0}")]
    Bundle(String),

    #[error("unknown action in {0:?}; supported actions: \"pick up\", \"put it\"")]
    UnknownAction(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
