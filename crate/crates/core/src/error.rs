use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 8;
    let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(" and {} more", ids.len() - SHOWN));
    }
    s
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate qa id {0:?}")]
    DuplicateId(String),
    #[error("qa pair {0:?} has an empty answer")]
    EmptyAnswer(String),
    #[error("qa pair {0:?} has an empty question")]
    EmptyQuestion(String),
    #[error("invalid decoding spec: {0}")]
    InvalidDecoding(String),
    #[error("exemplar pool too small: need {needed}, have {available}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("probe outcome for {0:?} has a zero total")]
    ZeroTotal(String),
    #[error("no probe outcome for qa id {0:?}")]
    MissingOutcome(String),
    #[error("snapshot does not cover qa id {0:?}")]
    MissingLabel(String),
    #[error("selection is empty: {0}")]
    EmptySelection(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("snapshots cover different id sets ({only_before} only in before, {only_after} only in after)")]
    IdSetMismatch { only_before: usize, only_after: usize },
    #[error("snapshots come from different models: {0:?} vs {1:?}")]
    ModelMismatch(String, String),
    #[error("no entity could be extracted from qa pair {0:?}")]
    NoEntity(String),
    #[error("invalid extraction rule {pattern:?}: {message}")]
    InvalidRule { pattern: String, message: String },
    #[error("mock backend cannot resolve qa id from request {0:?}")]
    UnknownQa(String),
    #[error("backend unavailable after {attempts} attempts for request {request_id}: {message}")]
    BackendUnavailable {
        request_id: String,
        attempts: u32,
        message: String,
    },
    #[error("campaign incomplete, {} pending ids: {}{}", pending.len(), preview(pending), cause.as_ref().map(|c| format!("; first failure: {c}")).unwrap_or_default())]
    CampaignIncomplete { pending: Vec<String>, cause: Option<String> },
    #[error("checkpoint digest {found} does not match campaign digest {expected}")]
    CheckpointMismatch { expected: String, found: String },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("trainer failed with exit code {code:?}: {stderr}")]
    TrainerFailed { code: Option<i32>, stderr: String },
    #[error("invalid trainer manifest: {0}")]
    InvalidManifest(String),
    #[error("run directory {0} is locked by another run")]
    RunLocked(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed {what} at line {line}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error families; each maps to one process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Backend,
    Trainer,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Backend => 3,
            ErrorKind::Trainer => 4,
            ErrorKind::Internal => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Validation => "validation",
            ErrorKind::Backend => "backend",
            ErrorKind::Trainer => "trainer",
            ErrorKind::Internal => "internal",
        }
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            DuplicateId(_) | EmptyAnswer(_) | EmptyQuestion(_) | InvalidDecoding(_)
            | PoolTooSmall { .. } | ZeroTotal(_) | MissingOutcome(_) | MissingLabel(_)
            | EmptySelection(_) | UnknownStrategy(_) | IdSetMismatch { .. }
            | ModelMismatch(..) | NoEntity(_) | InvalidRule { .. } | CheckpointMismatch { .. }
            | EmptyEvalSet | InvalidManifest(_) | Config(_) | Parse { .. } => {
                ErrorKind::Validation
            }
            UnknownQa(_) | BackendUnavailable { .. } | CampaignIncomplete { .. } => {
                ErrorKind::Backend
            }
            TrainerFailed { .. } => ErrorKind::Trainer,
            RunLocked(_) | Io { .. } | Json(_) => ErrorKind::Internal,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
