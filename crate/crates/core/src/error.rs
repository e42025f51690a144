use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the sampler, trainer or harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {field} = {value}: {reason}")]
    InvalidConfig {
        field: &'static str,
        value: String,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("sample id {id} out of range for {len} samples")]
    SampleOutOfRange { id: usize, len: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("logits recorded out of order for sample {id}: epoch {epoch} precedes last seen epoch {last}")]
    EpochRegression { id: usize, epoch: usize, last: usize },

    #[error("sample {0} has fewer than two logit snapshots")]
    MissingSnapshots(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("requested {requested} samples but only {available} are available")]
    CountExceedsPopulation { requested: usize, available: usize },

    #[error("no importance table exists for sampled epoch {0}")]
    NoImportanceTable(usize),

    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig { .. } => "invalid_config",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::SampleOutOfRange { .. } => "sample_out_of_range",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::EpochRegression { .. } => "epoch_regression",
            Error::MissingSnapshots(_) => "missing_snapshots",
            Error::Empty(_) => "empty",
            Error::CountExceedsPopulation { .. } => "count_exceeds_population",
            Error::NoImportanceTable(_) => "no_importance_table",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn config(field: &'static str, value: impl ToString, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            value: value.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
