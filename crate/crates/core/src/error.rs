use std::path::PathBuf;

use crate::model::{PromptId, ResponseId, Source};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pair {index} references unknown candidate {response_id} of prompt {prompt_id}")]
    DanglingId {
        index: usize,
        prompt_id: PromptId,
        response_id: ResponseId,
    },
    #[error("pair {index} has identical winner and loser")]
    SelfPair { index: usize },
    #[error("pair {index} duplicates an earlier pair")]
    DuplicatePair { index: usize },
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("response {response_id} is not a candidate of prompt {prompt_id}")]
    ForeignCandidate {
        prompt_id: PromptId,
        response_id: ResponseId,
    },
    #[error("requested {requested} pairs but only {available} distinct pairs exist")]
    NotEnoughPairs { requested: usize, available: usize },
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("mismatched candidate universe: {0}")]
    MismatchedUniverse(String),
    #[error("label sequences differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("no prompt yields a preference pair ({excluded} degenerate prompts)")]
    AllDegenerate { excluded: usize },
    #[error("{pool:?} share needs {requested} pairs but the pool holds {available}")]
    InsufficientSource {
        pool: Source,
        requested: usize,
        available: usize,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("oracle check failed: {0}")]
    CheckFailed(String),
    #[error("setup violation: {0}")]
    SetupViolation(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config key `{key}`: {message}")]
    ConfigParse { key: String, message: String },
    #[error("missing input {}", path.display())]
    MissingInput { path: PathBuf },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Fields of the machine-readable error record.
    pub fn record(&self) -> serde_json::Value {
        let mut rec = serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        match self {
            Error::ConfigParse { key, .. } => rec["key"] = key.clone().into(),
            Error::MissingInput { path } | Error::Io { path, .. } => rec["path"] = path.display().to_string().into(),
            Error::Parse { path, line, .. } => {
                rec["path"] = path.display().to_string().into();
                rec["line"] = (*line).into();
            }
            _ => {}
        }
        rec
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigParse {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DanglingId { .. } => "DanglingId",
            Error::SelfPair { .. } => "SelfPair",
            Error::DuplicatePair { .. } => "DuplicatePair",
            Error::InvalidSize(_) => "InvalidSize",
            Error::ForeignCandidate { .. } => "ForeignCandidate",
            Error::NotEnoughPairs { .. } => "NotEnoughPairs",
            Error::InvalidTemperature(_) => "InvalidTemperature",
            Error::NonFinite(_) => "NonFinite",
            Error::MismatchedUniverse(_) => "MismatchedUniverse",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::Empty => "Empty",
            Error::AllDegenerate { .. } => "AllDegenerate",
            Error::InsufficientSource { .. } => "InsufficientSource",
            Error::Numerical(_) => "Numerical",
            Error::CheckFailed(_) => "CheckFailed",
            Error::SetupViolation(_) => "SetupViolation",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::ConfigParse { .. } => "ConfigParse",
            Error::MissingInput { .. } => "MissingInput",
            Error::Parse { .. } => "Parse",
            Error::Io { .. } => "Io",
        }
    }

    /// Process exit code: 2 config, 3 input, 4 numerical (including a failed
    /// oracle check).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::InvalidTemperature(_) | Error::InvalidArgument(_) => 2,
            Error::Numerical(_) | Error::NonFinite(_) | Error::CheckFailed(_) => 4,
            _ => 3,
        }
    }
}
