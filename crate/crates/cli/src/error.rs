use std::path::Path;

use langneuron_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing input {path}")]
    MissingInput { path: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{context}: {source}")]
    Core { context: String, source: Error },
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::MissingInput {
                path: path.display().to_string(),
            }
        } else {
            Self::Io {
                path: path.display().to_string(),
                source,
            }
        }
    }

    pub fn core(context: impl Into<String>, source: Error) -> Self {
        // Surface a missing file as such, whichever layer reported it.
        if let Error::Io(e) = &source {
            if e.kind() == std::io::ErrorKind::NotFound {
                return Self::MissingInput { path: context.into() };
            }
        }
        Self::Core {
            context: context.into(),
            source,
        }
    }

    /// 2 for anything the caller can fix by changing inputs or flags, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::MissingInput { .. } => 2,
            Self::Core { source, .. } if source.is_validation() => 2,
            _ => 1,
        }
    }
}

pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for langneuron_core::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|e| CliError::core(what(), e))
    }
}
