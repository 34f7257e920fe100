//! Errors as the CLI reports them: a kind, a message and an exit code.

use std::fmt;
use std::path::Path;

use pearl_core::error::{Error, ErrorKind};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    #[serde(serialize_with = "kind_name")]
    pub kind: ErrorKind,
    pub message: String,
}

fn kind_name<S: serde::Serializer>(kind: &ErrorKind, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(kind.as_str())
}

impl Failure {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Failure {
            kind: ErrorKind::Io,
            message: format!("cannot access {}: {e}", path.display()),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Io => 2,
            ErrorKind::Validation => 3,
            ErrorKind::Numerical => 4,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.message)
    }
}
