use std::path::PathBuf;

use serde_json::json;

/// Failures of a CLI invocation, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or unreadable configuration (exit 2).
    #[error("{message}")]
    Config {
        message: String,
        path: Option<PathBuf>,
    },

    #[error("row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("values outside [{lo}, {hi}] in rows {rows:?}")]
    Range {
        path: PathBuf,
        rows: Vec<usize>,
        lo: f64,
        hi: f64,
    },

    /// Failure while running or writing (exit 1).
    #[error("{0}")]
    Runtime(String),

    #[error("verification failed: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self::Config {
            message: message.into(),
            path: None,
        }
    }

    pub fn from_core_config(e: calibrated_kelly::Error) -> Self {
        Self::config(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Parse { .. } | Self::Range { .. } => 2,
            Self::Runtime(_) | Self::Mismatch(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config { .. } => "config",
            Self::Parse { .. } => "parse",
            Self::Range { .. } => "range",
            Self::Runtime(_) => "runtime",
            Self::Mismatch(_) => "mismatch",
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        });
        let e = &mut v["error"];
        match self {
            Self::Config { path: Some(p), .. } => e["path"] = json!(p),
            Self::Parse {
                path, row, column, ..
            } => {
                e["path"] = json!(path);
                e["row"] = json!(row);
                e["column"] = json!(column);
            }
            Self::Range { path, rows, .. } => {
                e["path"] = json!(path);
                e["rows"] = json!(rows);
            }
            _ => {}
        }
        v
    }
}

impl From<calibrated_kelly::Error> for CliError {
    fn from(e: calibrated_kelly::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}
