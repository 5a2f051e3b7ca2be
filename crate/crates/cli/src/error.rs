use std::path::{Path, PathBuf};

use meshfuse_core::io::IoError;
use meshfuse_core::mesh::MeshError;
use meshfuse_core::sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: IoError },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("missing dataset file {0}")]
    MissingData(PathBuf),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

impl CliError {
    /// Stable identifier of the error class in the one-line error report.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Format { .. } | CliError::Csv { .. } => "format",
            CliError::MissingData(_) => "missing_data",
            CliError::Sim(_) => "simulation",
            CliError::Mesh(_) => "mesh",
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path) -> impl FnOnce(IoError) -> CliError + '_ {
        move |source| CliError::Format { path: path.to_path_buf(), source }
    }

    pub fn csv(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
        move |source| CliError::Csv { path: path.to_path_buf(), source }
    }
}
