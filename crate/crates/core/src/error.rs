use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a domain rule (empty image, unknown glyph, ...).
    #[error("{0}")]
    Domain(String),

    /// A caller-supplied parameter is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Codebook / feature configuration mismatch.
    #[error("configuration mismatch: {0}")]
    Config(String),

    /// Feature dimensions disagree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("no model for class {0}")]
    NoModel(String),

    #[error("curves undefined: {0}")]
    CurvesUndefined(String),

    #[error("conflicting actions for zone {0}")]
    ConflictingActions(String),

    #[error("unknown {kind}: {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("token expired")]
    TokenExpired,

    #[error("unknown token")]
    UnknownToken,

    /// On-disk data written by an incompatible version.
    #[error("cannot migrate {what} from version {found} (supported: {supported})")]
    Migration {
        what: String,
        found: u32,
        supported: u32,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
