use scatter_core::ScatterError;

/// Failures surfaced by the command line, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(#[from] ScatterError),

    #[error("malformed input {path}: {message}")]
    Format { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AppError {
    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Format { .. } => 2,
            // bad parameters reach the core as invalid arguments
            AppError::Numerical(ScatterError::InvalidArgument(_) | ScatterError::ShapeMismatch(_)) => 2,
            AppError::Numerical(_) => 3,
            AppError::Io { .. } => 1,
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
