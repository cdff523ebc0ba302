use std::path::PathBuf;

/// Errors raised by the IO, configuration and command layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// A malformed row in an input file.
    #[error("{path}:{line}: {message}")]
    Load { path: PathBuf, line: u64, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] latclass_core::Error),
    /// Estimation failed; `trace` points at whatever diagnostics were written.
    #[error("{message} (see {})", trace.display())]
    Estimation { message: String, trace: PathBuf },
    #[error("{0} self-test(s) failed")]
    SelfTest(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for usage and configuration mistakes, 1 for
    /// everything that went wrong at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::Core(latclass_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}
