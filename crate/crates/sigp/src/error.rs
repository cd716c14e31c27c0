use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("requested rank {requested} exceeds detected rank {detected}")]
    Rank { requested: usize, detected: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) => 1,
            Error::Dimension(_) | Error::Parse { .. } | Error::Data(_) | Error::Io(_) => 2,
            Error::NotSymmetric(_)
            | Error::Singular(_)
            | Error::Rank { .. }
            | Error::Numerical(_) => 3,
        }
    }
}
