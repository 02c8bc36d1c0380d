use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or sizes that do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Non-finite or otherwise invalid sample data.
    #[error("data error: {0}")]
    Data(String),

    /// A scalar parameter outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Malformed file contents (image, model container, CSV).
    #[error("format error: {0}")]
    Format(String),

    /// Divergence, NaN/Inf during iteration, or a solver that did not converge.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Kernel parameter fitting failed to bracket the threshold.
    #[error("fit error: {0}")]
    Fit(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
