use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("tape was recorded at parameter version {tape} but parameters are at version {current}")]
    StaleTape { tape: u64, current: u64 },

    #[error("fault references unknown channel {0}")]
    UnknownChannel(usize),

    #[error("missing trained component: {0}")]
    MissingComponent(String),

    #[error("archive section `{section}`: {message}")]
    Archive { section: String, message: String },

    #[error("unsupported archive format version {found} (expected {expected})")]
    ArchiveVersion { found: u32, expected: u32 },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn archive(section: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Archive {
            section: section.into(),
            message: message.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Stable machine-readable code, used by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::Shape(_) => "E_SHAPE",
            Error::InvalidArgument(_) => "E_INVALID",
            Error::InsufficientData(_) => "E_DATA",
            Error::StaleTape { .. } => "E_TAPE",
            Error::UnknownChannel(_) => "E_CHANNEL",
            Error::MissingComponent(_) => "E_MISSING",
            Error::Archive { .. } => "E_ARCHIVE",
            Error::ArchiveVersion { .. } => "E_VERSION",
            Error::Config { .. } => "E_CONFIG",
            Error::Parse { .. } => "E_PARSE",
            Error::Io(_) => "E_IO",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Returns the first non-finite entry as an error.
pub(crate) fn ensure_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}
