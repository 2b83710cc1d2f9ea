use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Filter(#[from] pmbtbd::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    /// Prefixes a config error with the file it came from.
    pub fn at(self, file: &str) -> Self {
        match self {
            Self::Config { path, msg } => Self::Config { path: format!("{file}: {path}"), msg },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
