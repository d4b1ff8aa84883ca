use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the drift/risk pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("safetensors parse error at byte {pos}: {kind}")]
    Parse { pos: u64, kind: ParseErrorKind },

    #[error("structural error in module `{module}`: {reason}")]
    Structure { module: String, reason: String },

    #[error("module mismatch: {0}")]
    ModuleMismatch(String),

    #[error("degenerate direction `{0}`: zero total displacement")]
    DegenerateDirection(String),

    #[error("degenerate sample `{0}`: all-zero update across every module")]
    DegenerateSample(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Short machine-parsable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::NonFinite(_) => "non_finite",
            Error::Parse { .. } => "parse",
            Error::Structure { .. } => "structure",
            Error::ModuleMismatch(_) => "module_mismatch",
            Error::DegenerateDirection(_) => "degenerate_direction",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::Invalid(_) => "invalid_input",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

/// Distinct failure modes of the safetensors container parser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Truncated,
    EmptyHeader,
    HeaderTooLarge {
        declared: u64,
        available: u64,
    },
    MalformedJson(String),
    UnsupportedDtype(String),
    BadShape(String),
    OutOfBounds {
        name: String,
        end: u64,
        buffer: u64,
    },
    Overlap {
        first: String,
        second: String,
    },
    SizeMismatch {
        name: String,
        expected: u64,
        actual: u64,
    },
}

impl std::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseErrorKind::Truncated => write!(f, "truncated file"),
            ParseErrorKind::EmptyHeader => write!(f, "empty header"),
            ParseErrorKind::HeaderTooLarge {
                declared,
                available,
            } => write!(
                f,
                "header length {declared} exceeds the {available} bytes available"
            ),
            ParseErrorKind::MalformedJson(msg) => write!(f, "malformed header json: {msg}"),
            ParseErrorKind::UnsupportedDtype(d) => write!(f, "unsupported dtype {d}"),
            ParseErrorKind::BadShape(msg) => write!(f, "bad tensor entry: {msg}"),
            ParseErrorKind::OutOfBounds { name, end, buffer } => write!(
                f,
                "tensor `{name}` ends at {end}, past the {buffer}-byte data buffer"
            ),
            ParseErrorKind::Overlap { first, second } => {
                write!(f, "tensors `{first}` and `{second}` overlap")
            }
            ParseErrorKind::SizeMismatch {
                name,
                expected,
                actual,
            } => write!(
                f,
                "tensor `{name}` spans {actual} bytes but its shape needs {expected}"
            ),
        }
    }
}
