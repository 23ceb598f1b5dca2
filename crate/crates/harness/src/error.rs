use std::path::{Path, PathBuf};

use mgdfis_core::TensorError;
use thiserror::Error;

use crate::config::ConfigError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const IO: i32 = 2;
    pub const CONTRACT: i32 = 3;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: TensorError },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Failed(String),
}

impl HarnessError {
    pub fn in_file(path: &Path, source: TensorError) -> Self {
        HarnessError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        let tensor = |e: &TensorError| {
            if e.is_contract_violation() {
                exit::CONTRACT
            } else {
                exit::IO
            }
        };
        match self {
            HarnessError::Usage(_) | HarnessError::Config { .. } => exit::USAGE,
            HarnessError::File { source, .. } => tensor(source),
            HarnessError::Tensor(e) => tensor(e),
            HarnessError::Failed(_) => exit::CONTRACT,
        }
    }
}
