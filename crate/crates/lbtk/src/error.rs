use std::path::PathBuf;

/// Process exit codes shared by every subcommand.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Top-level failure classification; each variant maps to one exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical blow-up: {0}")]
    Blowup(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input {path}: {why}")]
    BadInput { path: PathBuf, why: String },
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => EXIT_CONFIG,
            AppError::Blowup(_) => EXIT_BLOWUP,
            AppError::Io { .. } => EXIT_IO,
            // An unreadable or truncated data file is an i/o-class failure,
            // not a config mistake: the path was fine, the bytes were not.
            AppError::BadInput { .. } => EXIT_IO,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn bad_input(path: impl Into<PathBuf>, why: impl Into<String>) -> Self {
        AppError::BadInput { path: path.into(), why: why.into() }
    }
}
