use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("record {record}: non-monotonic time at event {event}")]
    NonMonotonic { record: String, event: usize },
    #[error("record {record}: event {event} uses mark index {index}, vocabulary has {num_marks} marks")]
    Vocabulary {
        record: String,
        event: usize,
        index: usize,
        num_marks: usize,
    },
    #[error("record {record}: event {event} has {active} active marks, multi-class mode needs exactly one")]
    ModeViolation {
        record: String,
        event: usize,
        active: usize,
    },
    #[error("record {record}: {msg}")]
    Invalid { record: String, msg: String },
    #[error("{}:{line}: {source}", path.display())]
    Located {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<DataError>,
    },
    #[error("{}:{line}: malformed record: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
}

impl DataError {
    pub(crate) fn at(self, path: &std::path::Path, line: usize) -> Self {
        DataError::Located {
            path: path.to_path_buf(),
            line,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum HawkesError {
    #[error("branching matrix has spectral radius {0:.4} >= 1; the process is not stationary")]
    NonStationary(f64),
    #[error("invalid Hawkes specification: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("missing parameter {0}")]
    Missing(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged at epoch {epoch}, batch {batch} (records {records:?})")]
    Divergence {
        epoch: usize,
        batch: usize,
        records: Vec<String>,
    },
    #[error("cannot transfer groups {groups:?}: {detail}")]
    Transfer { groups: Vec<String>, detail: String },
    #[error("dataset has no {0} records")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint {}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("group is empty")]
    EmptyGroup,
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("record {0}: final timestamp is zero, density undefined")]
    UndefinedDensity(String),
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("AUROC undefined: targets contain a single class")]
    SingleClass,
    #[error("length mismatch: {0}")]
    Mismatch(String),
    #[error("record {0} has no outcome label")]
    Unlabelled(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
