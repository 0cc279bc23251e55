use std::path::PathBuf;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A run configuration is inconsistent or incomplete.
    #[error("config error: {0}")]
    Config(String),

    /// A LIBSVM (or other text) input is malformed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// An iterative method failed to converge.
    #[error("numerical error: {what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    /// A numerical routine produced an unusable result.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by user input (bad arguments, configs, files).
    ///
    /// Numerical failures are reported as internal.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::NoConvergence { .. } | Error::Numerical(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
