use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::portfolio::PortfolioError;
use crate::problems::ProblemError;
use crate::training::TrainError;

/// Harness failures, grouped into the categories reported as exit codes.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training: {0}")]
    Training(String),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Training(_) => 4,
            HarnessError::Io { .. } => 5,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<ProblemError> for HarnessError {
    fn from(e: ProblemError) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => HarnessError::Config(m),
            other => HarnessError::Training(other.to_string()),
        }
    }
}

impl From<PortfolioError> for HarnessError {
    fn from(e: PortfolioError) -> Self {
        match e {
            PortfolioError::InsufficientModels { .. } | PortfolioError::Budget { .. } => {
                HarnessError::Config(e.to_string())
            }
            other => HarnessError::Data(other.to_string()),
        }
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}
