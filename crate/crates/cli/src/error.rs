use std::fmt;

use serde::Serialize;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const DEPENDENCY: i32 = 4;
    pub const NUMERIC: i32 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Usage,
    Config,
    Dependency,
    Numeric,
}

impl ErrorKind {
    pub fn code(self) -> i32 {
        match self {
            ErrorKind::Usage => exit::USAGE,
            ErrorKind::Config => exit::CONFIG,
            ErrorKind::Dependency => exit::DEPENDENCY,
            ErrorKind::Numeric => exit::NUMERIC,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn dependency(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Dependency, message)
    }

    pub fn code(&self) -> i32 {
        self.kind.code()
    }

    /// Single-line JSON rendering for stderr.
    pub fn to_line(&self) -> String {
        let body = serde_json::json!({
            "error": { "code": self.code(), "kind": self.kind, "message": self.message }
        });
        body.to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<stagewise::Error> for CliError {
    fn from(e: stagewise::Error) -> Self {
        use stagewise::Error as E;
        let kind = match &e {
            E::NonFinite(_) => ErrorKind::Numeric,
            E::InvalidArgument(_) | E::OfflineStreaming => ErrorKind::Config,
            E::Shape { .. } | E::Format { .. } | E::MissingFile(_) | E::Io { .. } | E::Json(_) => ErrorKind::Dependency,
        };
        CliError::new(kind, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
