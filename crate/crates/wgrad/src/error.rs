use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config file entries or input files.
    #[error("config error: {0}")]
    Config(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A computation failed inside the numerical core.
    #[error("numeric failure in {module}: {source}")]
    Numeric {
        module: &'static str,
        #[source]
        source: wgrad_core::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numeric { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attaches a module name to core errors, or reclassifies them as config
/// errors when they come from validating user input.
pub trait CoreResultExt<T> {
    fn numeric(self, module: &'static str) -> Result<T>;
    fn config(self) -> Result<T>;
}

impl<T> CoreResultExt<T> for wgrad_core::Result<T> {
    fn numeric(self, module: &'static str) -> Result<T> {
        self.map_err(|source| CliError::Numeric { module, source })
    }

    fn config(self) -> Result<T> {
        self.map_err(|e| CliError::Config(e.to_string()))
    }
}
