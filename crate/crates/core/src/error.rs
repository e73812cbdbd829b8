use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants are grouped by the kind of failure rather than by module so the
/// CLI can map them onto a stable machine-readable `kind` string.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate featurization: {0}")]
    DegenerateFeaturization(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("bootstrap instability: {undefined} of {total} resamples undefined")]
    Instability { undefined: usize, total: usize },

    #[error("separation: {0}")]
    Separation(String),

    #[error("rank deficiency: {0}")]
    Rank(String),

    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("endpoint returned status {status}: {excerpt}")]
    Endpoint { status: u16, excerpt: String },

    #[error("unparseable answer: {0}")]
    Parse(String),

    #[error("scoring failed for subject {id}: {reason}")]
    Scoring { id: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::Argument(_) => "argument",
            Error::DegenerateFeaturization(_) => "degenerate_featurization",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Instability { .. } => "instability",
            Error::Separation(_) => "separation",
            Error::Rank(_) => "rank",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Transport(_) => "transport",
            Error::Endpoint { .. } => "endpoint",
            Error::Parse(_) => "parse",
            Error::Scoring { .. } => "scoring",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
