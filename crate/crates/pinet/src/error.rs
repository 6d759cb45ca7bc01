//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by data handling, training, calibration, and the
/// experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A value outside its mathematical domain (e.g. a quantile level
    /// outside `[0,1]`, a non-positive variance).
    #[error("domain error: {0}")]
    Domain(String),

    /// A non-finite number where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Dimension or length mismatch between containers.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An operation that needs at least one observation got none.
    #[error("empty data: {0}")]
    EmptyData(&'static str),

    /// Training aborted (divergence, non-finite parameters).
    #[error("training failed at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// A named CSV column is absent from the header.
    #[error("missing column '{0}'")]
    MissingColumn(String),

    /// One or more data rows failed numeric parsing. Row numbers are
    /// 1-based over data rows (the header is not counted).
    #[error("invalid values in data row(s) {rows:?}: {detail}")]
    InvalidRows { rows: Vec<usize>, detail: String },

    /// A feature is constant on the fitting subset, so it cannot be
    /// standardized.
    #[error("zero-variance feature '{0}' on the training subset")]
    ZeroVariance(String),

    /// Invalid experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An artifact carries an unsupported `format_version`.
    #[error("unsupported format version {found} for {artifact} (expected {expected})")]
    FormatVersion {
        artifact: &'static str,
        expected: u32,
        found: u32,
    },

    /// A pipeline stage failed; wraps the underlying error with the stage
    /// name and a hash of the configuration that produced it.
    #[error("stage '{stage}' failed (config {config_hash}): {source}")]
    Stage {
        stage: &'static str,
        config_hash: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an error with pipeline stage context.
    pub fn in_stage(self, stage: &'static str, config_hash: &str) -> Error {
        Error::Stage {
            stage,
            config_hash: config_hash.to_string(),
            source: Box::new(self),
        }
    }
}
