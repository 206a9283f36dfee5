use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("sample {0:?} has no non-blank line to select from")]
    BlankCode(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instruction must be a single line")]
    MultilineInstruction,

    #[error("instruction is empty")]
    EmptyInstruction,

    #[error("middle already contains an <explain> tag marker")]
    ExplainTagInMiddle,

    #[error("invalid sentinel set: {0}")]
    InvalidSentinels(String),

    #[error("unknown mode {0:?}")]
    UnknownMode(String),

    #[error("layout does not match {mode}: {reason}")]
    Layout { mode: String, reason: String },

    #[error("vocabulary is empty")]
    EmptyVocab,

    #[error("every vocabulary candidate collides with an existing sentinel")]
    NoInsCandidate,

    #[error("tag {tag} cannot be built from {kind}")]
    TagMismatch { tag: &'static str, kind: &'static str },

    #[error("solution for {0:?} has no non-blank line")]
    BlankSolution(String),

    #[error("requested {requested} items but only {available} are available")]
    SubsetTooLarge { requested: usize, available: usize },

    #[error("task {0:?} has no instruction")]
    MissingInstruction(String),

    #[error("cursor {cursor} is outside the source (length {len}) or not on a char boundary")]
    CursorOutOfRange { cursor: usize, len: usize },

    #[error("no instruction marker configured for language {0:?}")]
    UnknownLanguage(String),

    #[error("unknown model profile {0:?}")]
    UnknownProfile(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("empty result set")]
    EmptyResults,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
