use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WarnError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: {msg} (at byte offset {offset})")]
    Format { what: String, offset: usize, msg: String },
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error(transparent)]
    Core(#[from] warn_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl WarnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        WarnError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: impl Into<String>, offset: usize, msg: impl Into<String>) -> Self {
        WarnError::Format {
            what: what.into(),
            offset,
            msg: msg.into(),
        }
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        WarnError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            WarnError::Config { .. } | WarnError::Core(warn_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = WarnError> = std::result::Result<T, E>;

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| WarnError::io(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| WarnError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| WarnError::io(path, e))
}
