use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: row {row}, column '{column}': cannot parse '{value}' as a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("unsupported operation for model kind '{kind}': {what}")]
    Unsupported { kind: String, what: String },

    #[error("unknown {what} '{id}'")]
    Unknown { what: &'static str, id: String },

    #[error("hyperparameter '{name}': {reason}")]
    Domain { name: String, reason: String },

    #[error("registry: {0}")]
    Registry(String),

    #[error("config: {0}")]
    Config(String),

    #[error("metric '{metric}': {reason}")]
    Metric { metric: String, reason: String },

    #[error("explainer '{explainer}': {reason}")]
    Explainer { explainer: String, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("no compatible solution: {reason}")]
    NoCompatibleSolution {
        reason: String,
        suggestions: Vec<(String, String)>,
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
}
