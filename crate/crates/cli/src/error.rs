use std::path::PathBuf;

/// Failures surfaced by the front end, mapped onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{0}")]
    Core(#[from] misclass_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 1 for input, I/O and schema problems; 2 for mathematical or identification failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_input_error() => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "Io",
            CliError::Schema(_) => "Schema",
            CliError::Core(e) => e.name(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
