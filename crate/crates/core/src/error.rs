use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // corpus / qa input
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("path not found: {}", .0.display())]
    PathNotFound(PathBuf),

    // configuration
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("template error: {0}")]
    Template(String),

    // embeddings / index
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate chunk ref {0}")]
    DuplicateRef(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("index format error: {0}")]
    Format(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    // remote endpoints
    #[error("request timed out")]
    Timeout,
    #[error("gave up after {attempts} attempts (last status {status})")]
    RateLimitedExhausted { attempts: u32, status: u16 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("completion was empty")]
    EmptyCompletion,

    // metrics
    #[error("QA set is empty")]
    EmptyQaSet,
    #[error("metric undefined: no statements on either side")]
    MetricUndefined,
    #[error("no results to aggregate")]
    EmptyResults,

    #[error("question {qa_id}: {source}")]
    Question {
        qa_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn for_question(self, qa_id: &str) -> Self {
        match self {
            e @ Error::Question { .. } => e,
            e => Error::Question {
                qa_id: qa_id.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// Strips any per-question annotation.
    pub fn root(&self) -> &Error {
        match self {
            Error::Question { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors caused by bad configuration or arguments rather than by data or runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::InvalidConfig(_) | Error::Template(_))
    }
}
