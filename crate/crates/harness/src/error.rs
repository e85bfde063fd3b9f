use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] pathspace_core::Error),

    #[error("report serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    /// Prefixes a configuration error with the line of the entry it concerns.
    pub(crate) fn at_line(self, line: usize) -> Self {
        match self {
            HarnessError::Config(m) if !m.starts_with("line ") => HarnessError::Config(format!("line {line}: {m}")),
            other => other,
        }
    }

    /// `2` for configuration problems, `3` for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}
