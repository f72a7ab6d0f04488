use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the reconciliation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("cleaning error: node `{node}` has no valid observation")]
    Cleaning { node: String },

    #[error("feature window error: {0}")]
    FeatureWindow(String),

    #[error("underdetermined regression: {rows} rows for {cols} coefficients")]
    Underdetermined { rows: usize, cols: usize },

    #[error("zero-variance residual column for `{node}`")]
    ZeroVariance { node: String },

    #[error("numerical error: {message} (condition number {condition:.3e})")]
    Numerical { message: String, condition: f64 },

    #[error("degenerate benchmark: {0}")]
    DegenerateBenchmark(String),

    #[error("artifact error in {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code: 2 for invalid input, 3 for numerical failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Validation(_)
            | Error::Structural(_)
            | Error::Ingest(_)
            | Error::Cleaning { .. }
            | Error::FeatureWindow(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Artifact { .. } => 2,
            Error::Underdetermined { .. }
            | Error::ZeroVariance { .. }
            | Error::Numerical { .. }
            | Error::DegenerateBenchmark(_) => 3,
            Error::Io { .. } => 1,
        }
    }
}
