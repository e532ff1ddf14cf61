use std::fmt;
use std::path::PathBuf;

/// Errors surfaced by quantizer, trainer, and harness operations.
#[derive(Debug)]
pub enum Error {
    /// A caller violated an operation precondition.
    Contract(String),
    /// A configuration value is out of range or inconsistent; `key` names
    /// the offending setting.
    Config { key: String, message: String },
    /// A gradient or parameter became NaN/Inf; the update was aborted.
    Numeric(String),
    /// An operation requires at least one trained coding vector.
    EmptyModel,
    /// A class id had no stored data where some was required.
    MissingClass(usize),
    /// Filesystem failure, tagged with the offending path.
    Io { path: PathBuf, source: std::io::Error },
    /// A text artifact failed to parse. `line` is 1-based when known.
    Parse {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Config { key, message } => write!(f, "invalid config `{key}`: {message}"),
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            Error::EmptyModel => write!(f, "no coding vectors are trained yet"),
            Error::MissingClass(id) => write!(f, "class {id} has no stored data"),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::Parse {
                path,
                line,
                message,
            } => match line {
                Some(n) => write!(f, "parse error in {} line {n}: {message}", path.display()),
                None => write!(f, "parse error in {}: {message}", path.display()),
            },
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

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
}

pub type Result<T> = std::result::Result<T, Error>;
