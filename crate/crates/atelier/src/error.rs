use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] atelier_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: unreadable: {message}", path.display())]
    Unreadable { path: PathBuf, message: String },
    #[error("{}: unsupported format: {message}", path.display())]
    Unsupported { path: PathBuf, message: String },
    #[error("{}: dimension overflow: {width}x{height}", path.display())]
    DimensionOverflow { path: PathBuf, width: u64, height: u64 },
    #[error("{}: checksum mismatch (file is corrupt or truncated)", path.display())]
    Checksum { path: PathBuf },
    #[error("{}: model format version {found} is not supported (this build reads version {supported})", path.display())]
    Version { path: PathBuf, found: u32, supported: u32 },
    #[error("{}: line {line}: {message}", path.display())]
    Table { path: PathBuf, line: usize, message: String },
    #[error("painting {painting_id}: {source}")]
    Painting {
        painting_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{0}")]
    Data(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Internal(_) => 3,
            Error::Painting { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
