use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },

    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Numerical(#[from] reconfig_core::Error),

    #[error("{0} check(s) failed")]
    CheckFailed(usize),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 1 for configuration and input problems, 2 for
    /// numerical failures, 3 for violated checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } | HarnessError::Parse { .. } | HarnessError::Io { .. } => 1,
            HarnessError::Numerical(e) if !e.is_numerical() => 1,
            HarnessError::Numerical(_) => 2,
            HarnessError::CheckFailed(_) => 3,
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            field: Option<&'a str>,
            message: String,
            exit_code: i32,
        }
        let (kind, field) = match self {
            HarnessError::Config { field, .. } => ("config", Some(field.as_str())),
            HarnessError::Parse { .. } => ("parse", None),
            HarnessError::Io { .. } => ("io", None),
            HarnessError::Numerical(e) if e.is_numerical() => ("numerical", None),
            HarnessError::Numerical(_) => ("invalid-input", None),
            HarnessError::CheckFailed(_) => ("check", None),
        };
        let message = match self {
            HarnessError::Config { message, .. } => message.clone(),
            other => other.to_string(),
        };
        serde_json::to_string(&Record {
            error: kind,
            field,
            message,
            exit_code: self.exit_code(),
        })
        .expect("error record serializes")
    }
}
