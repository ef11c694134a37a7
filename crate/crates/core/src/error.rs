use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the workbench.
///
/// The variants split into caller mistakes (shape and argument errors),
/// numerical failures (non-finite values, divergence) and I/O or data
/// problems. The CLI maps the first group to exit code 1 and the rest to 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value at batch index {index}: {what}")]
    NonFinite { index: usize, what: String },

    #[error("solver diverged at iteration {iteration} in cell {cell}")]
    Divergence { iteration: usize, cell: usize },

    #[error("training of {network} produced a non-finite loss at epoch {epoch}")]
    Training { network: String, epoch: usize },

    #[error("data consistency: {0}")]
    Data(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("refusing to overwrite differing artifact {0} (pass --force)")]
    Overwrite(PathBuf),

    #[error("{0}")]
    Missing(String),

    #[error("config: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by how the program was invoked rather than by
    /// the numerics or the data on disk.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Argument(_) | Error::Config(_) | Error::Shape { .. } | Error::Overwrite(_)
        )
    }
}
