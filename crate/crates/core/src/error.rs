use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("missing label column `{0}`")]
    MissingLabelColumn(String),
    #[error("row {row}: non-numeric value {value:?} in column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: label {value:?} is outside 1..=4")]
    InvalidLabel { row: usize, value: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least {need} frames, got {got}")]
    TooFewFrames { need: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature columns differ: missing {missing:?}")]
    FeatureMismatch { missing: Vec<String> },
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("classes absent from source: {0:?}")]
    MissingClasses(Vec<u8>),
    #[error("cluster {0} received no source windows; try another seed")]
    EmptyCluster(usize),
    #[error("nearest-neighbour pool is empty")]
    EmptyPool,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class priors are not a probability simplex: {0:?}")]
    InvalidSimplex(Vec<f64>),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
