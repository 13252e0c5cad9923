use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("non-finite loss at episode {episode} (seed {seed}); parameter norms: {norms}")]
    NonFiniteLoss { episode: usize, seed: u64, norms: String },

    #[error("missing required input: --{0}")]
    MissingInput(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Argument(_) => "argument",
            Error::Config { .. } => "config",
            Error::Format { .. } => "format",
            Error::Sampling(_) => "sampling",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::MissingInput(_) => "missing_input",
            Error::Io { .. } => "io",
        }
    }
}
