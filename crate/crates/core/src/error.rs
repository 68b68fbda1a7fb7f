use std::path::PathBuf;

/// Errors produced anywhere in the pruning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: byte offset {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// A caller broke an operation's precondition (shape mismatch, bad index, ...).
    #[error("{0}")]
    Contract(String),

    /// Input is well formed but cannot support the computation (e.g. zero variance).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A numeric argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    /// Failure of one stage of an experiment run.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag used by the CLI on stderr.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Format { .. } => "format",
            Error::Parse { .. } => "parse",
            Error::Contract(_) => "contract",
            Error::Degenerate(_) => "degenerate",
            Error::Domain(_) => "domain",
            Error::Manifest(_) => "manifest",
            Error::Stage { .. } => "stage",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn stage(stage: impl Into<String>, source: Error) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
