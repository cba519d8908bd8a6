use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An annotation, label row or coordinate tuple violates its schema.
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),

    /// A caller broke a shape or range precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("unsupported transfer syntax {uid}")]
    UnsupportedSyntax { uid: String },

    /// Well-formed input that uses a feature outside the supported subset.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed file at byte {offset}: {reason}")]
    MalformedFile { offset: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn annotation(msg: impl Into<String>) -> Self {
        Error::MalformedAnnotation(msg.into())
    }

    pub(crate) fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            offset,
            reason: reason.into(),
        }
    }

    /// Short machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedAnnotation(_) => "malformed_annotation",
            Error::Contract(_) => "contract",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::UnsupportedSyntax { .. } => "unsupported_syntax",
            Error::Unsupported(_) => "unsupported",
            Error::MalformedFile { .. } => "malformed_file",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
