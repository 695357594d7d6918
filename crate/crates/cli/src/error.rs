use std::path::PathBuf;

use bmms::BmmsError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{}: line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput(_) => 2,
            CliError::Numerical(_) => 3,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path)
        } else {
            CliError::Io { path, source }
        }
    }
}

impl From<BmmsError> for CliError {
    fn from(e: BmmsError) -> Self {
        match e {
            BmmsError::NumericalSingularity(m) => CliError::Numerical(m),
            BmmsError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
