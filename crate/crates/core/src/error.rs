use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed URI `{uri}`: {reason}")]
    MalformedUri { uri: String, reason: String },

    #[error("malformed frequency `{0}`")]
    MalformedFrequency(String),

    #[error("line {line}: {reason}")]
    MalformedLine { line: u64, reason: String },

    #[error("malformed CDXJ line: {0}")]
    MalformedCdxj(String),

    #[error("input not sorted: `{key}` does not sort after `{previous}`")]
    UnsortedInput { previous: String, key: String },

    #[error("output sink is not seekable")]
    SinkNotSeekable,

    #[error("gzip-compressed map cannot be binary searched; decompress it first (e.g. `gunzip -k {0}`)")]
    GzipNotSeekable(String),

    #[error("{0}")]
    DomainError(String),

    #[error("empty input")]
    EmptyInput,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("insufficient stats for {segment} segment: {usable} usable depth(s), need at least 2")]
    InsufficientStats { segment: &'static str, usable: usize },

    #[error("lookup log contains no usable URIs")]
    EmptyLog,

    #[error("HTTP request for {uri} failed with status {status}")]
    HttpFailure { uri: String, status: u16 },

    #[error("pagination exceeded {0} pages")]
    TooManyPages(usize),

    #[error("invalid document: {0}")]
    InvalidDocument(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn malformed_uri(uri: &str, reason: impl Into<String>) -> Self {
        Error::MalformedUri {
            uri: uri.to_owned(),
            reason: reason.into(),
        }
    }
}
