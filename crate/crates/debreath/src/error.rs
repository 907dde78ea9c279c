use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
///
/// The CLI maps these onto stable exit codes: input/configuration problems
/// exit with 2, numerical divergence with 3, model-format problems with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported audio format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("model format error: {0}")]
    ModelFormat(#[from] ModelFormatError),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Model-file rejection reasons. Wrong magic and wrong version are distinct
/// so a caller can tell "not a model file" from "model file from another
/// format revision".
#[derive(Debug, thiserror::Error)]
pub enum ModelFormatError {
    #[error("bad magic bytes (expected \"BRNM\")")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error under the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Diverged(_) => 3,
            Error::ModelFormat(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
