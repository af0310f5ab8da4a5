use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("segment length {segment} exceeds record length {record}")]
    SegmentTooLong { segment: usize, record: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("sample interval mismatch: {left} s vs {right} s")]
    SampleIntervalMismatch { left: f64, right: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("infeasible frequency plan: {0}")]
    Infeasible(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("unknown noise profile `{name}` referenced from `{key}`")]
    UnknownProfile { name: String, key: String },

    #[error("unknown loop `{0}` (expected local-a, local-b, fast-a, fast-b or global)")]
    UnknownLoop(String),

    #[error("identification of the {0} loop is not supported: {1}")]
    IdentificationDeclined(String, String),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn require(cond: bool, name: &'static str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(name, reason))
    }
}
