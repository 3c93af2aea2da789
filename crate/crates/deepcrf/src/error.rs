use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Domain validation failures (bad parameters, degenerate inputs).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Subcarrier bins where a division would blow up, with their indices.
    #[error("ill-conditioned bins (|h| < {floor:e}): {bins:?}")]
    IllConditionedBins { bins: Vec<usize>, floor: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Binary file format violations; each failure mode is distinct.
    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("config error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Train(String),

    #[error(transparent)]
    Kernel(#[from] autodiff::Error),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file: needed {needed} more bytes for {context}")]
    Truncated { needed: usize, context: String },
    #[error("record count mismatch: header declares {declared}, file holds {actual}")]
    CountMismatch { declared: u64, actual: u64 },
    #[error("trailing bytes after declared records: {0} extra")]
    TrailingBytes(u64),
    #[error("malformed {context}: {detail}")]
    Malformed { context: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
