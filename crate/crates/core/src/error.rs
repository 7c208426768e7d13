use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("inconsistent data: {0}")]
    InconsistentData(String),

    #[error("cannot evaluate pair ({source_id}, {subject_id}): {reason}")]
    Evaluation {
        source_id: u32,
        subject_id: u32,
        reason: String,
    },

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("rank-deficient design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("non-finite log-likelihood at {0}")]
    NonFinite(String),

    #[error("{0}")]
    Schema(String),

    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn inconsistent(msg: impl Into<String>) -> Self {
        Error::InconsistentData(msg.into())
    }

    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    /// True for errors caused by malformed input files or configuration.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Config { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::UnknownCovariate(_)
        )
    }
}
