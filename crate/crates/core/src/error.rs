use crate::manifold::LorentzPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("manifold constraint violated: {0}")]
    Constraint(String),

    #[error("numeric guard tripped: {0}")]
    Numeric(String),

    #[error("no convergence after {iterations} iterations (update norm {update_norm:e})")]
    Convergence {
        iterations: usize,
        update_norm: f64,
        last: Box<LorentzPoint>,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 validation, 2 numeric/convergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) | Error::Validation(_) | Error::Parse(_) | Error::Constraint(_) => 1,
            Error::Numeric(_) | Error::Convergence { .. } => 2,
            Error::Io { .. } => 3,
        }
    }
}
