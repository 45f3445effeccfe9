use std::path::PathBuf;

/// Errors of the experiment driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] savc_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid configuration values: {}", .0.join("; "))]
    InvalidFields(Vec<String>),
    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Input(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Format { path: path.into(), message: message.to_string() }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) => match e {
                savc_core::Error::InvalidInput(_) => "invalid_input",
                savc_core::Error::InvalidConfig(_) => "invalid_config",
                savc_core::Error::InvalidData(_) => "invalid_data",
                savc_core::Error::InvalidState(_) => "invalid_state",
                savc_core::Error::UndefinedSimilarity => "undefined_similarity",
                savc_core::Error::UndefinedMetric(_) => "undefined_metric",
                savc_core::Error::Divergence { .. } => "divergence",
            },
            Error::Io { .. } => "io",
            Error::Config(_) => "invalid_config",
            Error::UnknownKeys(_) => "unknown_keys",
            Error::InvalidFields(_) => "invalid_config",
            Error::Format { .. } => "format",
            Error::Input(_) => "invalid_input",
        }
    }

    /// `{"error": kind, "message": ..., "keys": [...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            Error::UnknownKeys(keys) | Error::InvalidFields(keys) => {
                v["keys"] = serde_json::json!(keys);
            }
            _ => {}
        }
        v
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
