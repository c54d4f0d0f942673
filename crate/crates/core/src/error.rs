use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required directory `{0}`")]
    MissingDirectory(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: file is not valid UTF-8")]
    Undecodable { path: PathBuf },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("invalid document `{id}`: {reason}")]
    InvalidDocument { id: String, reason: String },

    #[error("not enough {label} training documents: required {required}, available {available}")]
    InsufficientDocuments {
        label: &'static str,
        required: usize,
        available: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Translate(#[from] crate::translate::TranslateError),

    #[error("training corpus must contain both labels (got {positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },

    #[error("{path}: row {row}: {message}")]
    InvalidPrediction {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("duplicate prediction for document `{doc_id}` in source `{source_id}`")]
    DuplicatePrediction { doc_id: String, source_id: String },

    #[error("missing predictions: {}", format_gaps(.0))]
    PredictionGaps(Vec<(String, String)>),

    #[error("invalid simplex weights: {0}")]
    InvalidWeights(String),

    #[error("unknown prediction source `{0}`")]
    UnknownSource(String),

    #[error("{0}")]
    EmptyInput(String),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_gaps(gaps: &[(String, String)]) -> String {
    const SHOWN: usize = 10;
    let mut out = gaps
        .iter()
        .take(SHOWN)
        .map(|(source, doc)| format!("{source}/{doc}"))
        .collect::<Vec<_>>()
        .join(", ");
    if gaps.len() > SHOWN {
        out.push_str(&format!(" (and {} more)", gaps.len() - SHOWN));
    }
    out
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
