use std::path::{Path, PathBuf};

use hydra::HydraError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// A library error raised while reading a particular input file.
    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: HydraError },
    #[error(transparent)]
    Hydra(#[from] HydraError),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Hydra(HydraError::io(path, e))
    }

    pub fn in_file(path: &Path) -> impl FnOnce(HydraError) -> CliError + '_ {
        move |source| CliError::InFile {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 usage or configuration, 2 bad data, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::InFile { source, .. } | CliError::Hydra(source) => hydra_exit_code(source),
        }
    }
}

fn hydra_exit_code(e: &HydraError) -> u8 {
    match e {
        HydraError::Config(_) | HydraError::Compatibility(_) => 1,
        HydraError::Io { .. } => 3,
        _ => 2,
    }
}
