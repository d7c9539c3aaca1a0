use std::path::{Path, PathBuf};

use ramannet_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{context}{error}")]
    Core { context: String, error: CoreError },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{failed} of {total} splits failed: {first}")]
    SplitsFailed {
        failed: usize,
        total: usize,
        first: String,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, line: u64, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    /// Core error annotated with the file or stage it came from.
    pub fn core_in(context: impl std::fmt::Display, error: CoreError) -> Self {
        Self::Core {
            context: format!("{context}: "),
            error,
        }
    }

    /// Stable machine-parsable category printed after `error:`.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Parse { .. } => "parse",
            Self::Usage(_) => "usage",
            Self::Config { .. } => "config",
            Self::Json(_) => "io",
            Self::SplitsFailed { .. } => "training",
            Self::Core { error, .. } => match error {
                CoreError::Shape { .. } | CoreError::InputTooShort { .. } => "shape",
                CoreError::Config(_) | CoreError::TopKOutOfRange { .. } => "config",
                CoreError::NonFiniteLoss { .. } | CoreError::BatchTooSmall { .. } | CoreError::Hook(_) => "training",
                CoreError::Checkpoint(_) => "checkpoint",
                CoreError::NoCommonRange { .. }
                | CoreError::Extrapolation { .. }
                | CoreError::InvalidSpectrum(_) => "preprocess",
                CoreError::LabelOutOfRange { .. }
                | CoreError::IndexOutOfRange { .. }
                | CoreError::EmptyDataset(_)
                | CoreError::Stratification { .. } => "data",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }

    /// The single line printed on failure.
    pub fn report_line(&self) -> String {
        let message = self.to_string().replace(['\n', '\r'], " ");
        format!("error:{}: {}", self.kind(), message)
    }
}

impl From<CoreError> for CliError {
    fn from(error: CoreError) -> Self {
        Self::Core {
            context: String::new(),
            error,
        }
    }
}
