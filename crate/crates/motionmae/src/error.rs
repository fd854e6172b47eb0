use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("truncated {what}: need {needed} bytes, have {have}")]
    Truncated { what: &'static str, needed: usize, have: usize },
    #[error("unsupported {what} version {found} (expected {expected})")]
    UnsupportedVersion { what: &'static str, found: u8, expected: u8 },
    #[error("file digest mismatch: checkpoint bytes are corrupted")]
    Corrupted,
    #[error("config digest mismatch: checkpoint was written for a different model configuration")]
    DigestMismatch,
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] motionmae_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit status: 1 check failure, 2 configuration, 3 I/O and file
    /// formats, 4 numerical.
    pub fn exit_code(&self) -> u8 {
        use motionmae_core::Error as C;
        match self {
            Error::CheckFailed(_) => 1,
            Error::Config(_) | Error::DigestMismatch => 2,
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Corrupted
            | Error::Malformed { .. } => 3,
            Error::Core(C::NonFinite { .. } | C::NonFiniteLoss { .. } | C::NonDeterministic) => 4,
            Error::Core(_) => 2,
        }
    }
}
