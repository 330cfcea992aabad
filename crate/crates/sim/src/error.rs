use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Structural problems found while decoding one of the binary or text
/// artifact formats. Offsets are byte positions from the start of the file.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {found:?} at byte 0, expected {expected:?}")]
    BadMagic { found: Vec<u8>, expected: &'static [u8] },
    #[error("truncated at byte {offset}: needed {needed} more bytes, {available} left")]
    Truncated { offset: u64, needed: u64, available: u64 },
    #[error("unsupported {what} version {found} (this build reads version {supported})")]
    UnsupportedVersion { what: &'static str, found: u64, supported: u64 },
    #[error("malformed header at byte {offset}: {message}")]
    Header { offset: u64, message: String },
    #[error("{extra} unexpected trailing bytes at byte {offset}")]
    Trailing { offset: u64, extra: u64 },
    #[error("expected a {expected} file, found {found:?}")]
    WrongKind { expected: &'static str, found: String },
    #[error("malformed {what}: {message}")]
    Parse { what: &'static str, message: String },
    #[error(transparent)]
    Invalid(#[from] multisense_core::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
    /// A configuration value failed to parse or validate. `field` is the
    /// dotted path of the offending key when it is known.
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] multisense_core::Error),
}

impl SimError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, source: FormatError) -> Self {
        Self::Format { path: path.to_path_buf(), source }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { field: field.into(), message: message.into() }
    }

    /// Short stable identifier for scripts matching on failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => "not-found",
            Self::Io { .. } => "io",
            Self::Format { source: FormatError::UnsupportedVersion { .. }, .. } => "version",
            Self::Format { .. } => "format",
            Self::Config { .. } => "config",
            Self::Usage(_) => "usage",
            Self::Core(_) => "runtime",
        }
    }

    /// One-line JSON object: `{"error":kind,"message":...}` plus `path` or
    /// `field` when the failure has one.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            message: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            path: Option<String>,
            #[serde(skip_serializing_if = "Option::is_none")]
            field: Option<&'a str>,
        }
        let (path, field) = match self {
            Self::Io { path, .. } | Self::Format { path, .. } => (Some(path.display().to_string()), None),
            Self::Config { field, .. } => (None, Some(field.as_str())),
            _ => (None, None),
        };
        let line = Line { error: self.kind(), message: self.to_string(), path, field };
        serde_json::to_string(&line).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
