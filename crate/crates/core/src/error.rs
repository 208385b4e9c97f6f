use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty embedding file: {0}")]
    EmptyFile(PathBuf),

    #[error("ensemble needs at least {need} models, got {got}")]
    TooFewModels { need: usize, got: usize },

    #[error("dimension mismatch: model {label} has d={got}, expected {expected}")]
    DimensionMismatch {
        label: String,
        expected: usize,
        got: usize,
    },

    #[error("empty aligned vocabulary")]
    EmptyAlignedVocabulary,

    #[error("word not in vocabulary: {0}")]
    MissingWord(String),

    #[error("zero-norm vector for word: {0}")]
    DegenerateVector(String),

    #[error("degenerate base pair {male}/{female}: m - f has zero norm")]
    DegeneratePair { male: String, female: String },

    #[error("NBM needs {k} neighbours for {word} but only {available} are eligible")]
    TooFewNeighbours {
        word: String,
        k: usize,
        available: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown label: {0}")]
    UnknownLabel(String),

    #[error("all {0} are missing from the aligned vocabulary")]
    AllMissing(&'static str),

    #[error("singular mixed-model system; collinear columns: {0:?}")]
    Collinear(Vec<String>),

    #[error("config: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
