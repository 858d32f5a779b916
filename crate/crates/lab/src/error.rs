use std::path::{Path, PathBuf};

/// Errors of the IO layer. Core errors pass through unchanged so their
/// taxonomy names survive to the command line.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] damage_core::Error),
    #[error("malformed label file: {0}")]
    MalformedLabelFile(String),
    #[error("no complete scene under {0}")]
    EmptyDataset(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl LabError {
    /// Taxonomy name printed by the command line.
    pub fn name(&self) -> &'static str {
        match self {
            LabError::Core(e) => e.name(),
            LabError::MalformedLabelFile(_) => "MalformedLabelFile",
            LabError::EmptyDataset(_) => "EmptyDataset",
            LabError::Io { .. } | LabError::Format { .. } => "IoFailure",
        }
    }

    pub(crate) fn format(path: &Path, msg: impl std::fmt::Display) -> Self {
        LabError::Format { path: path.to_path_buf(), msg: msg.to_string() }
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| LabError::Io { path: path.to_path_buf(), source })
    }
}
