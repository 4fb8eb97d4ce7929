use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid format: {0}")]
    Format(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("non-manifold edge ({0}, {1}) has {2} incident triangles")]
    NonManifold(usize, usize, usize),
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("index {index} out of range for {what} of length {len}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("linear solve failed: {0}")]
    Solve(String),
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty result: {0}")]
    Empty(String),
    #[error("missing data: {0}")]
    Missing(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Singular(_) | Error::Solve(_) | Error::BehindCamera(_) | Error::Degenerate(_)
        )
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}
