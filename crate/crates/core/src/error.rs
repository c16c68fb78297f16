use thiserror::Error;

/// Failure modes across the numeric stack.
///
/// Two broad families matter to callers: rejected inputs (bad shapes, bad
/// arguments, malformed files) and numerical breakdowns (factorization or
/// solver failures on data that passed validation). `is_validation`
/// distinguishes them so the CLI can map each family to its exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid input in {op}: {detail}")]
    Invalid { op: &'static str, detail: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("non-finite result produced by {op}")]
    NonFiniteResult { op: &'static str },

    #[error("Cholesky factorization failed at pivot {pivot}")]
    Cholesky { pivot: usize },

    #[error("solver breakdown at iteration {iter}: {detail}")]
    SolverBreakdown { iter: usize, detail: String },

    #[error("{path}:{line}:{column}: {detail}")]
    Parse { path: String, line: usize, column: usize, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("model directory invalid: {0}")]
    ModelFormat(String),
}

impl Error {
    /// True for rejected inputs (caller mistakes), false for numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. }
                | Error::Invalid { .. }
                | Error::NonFinite { .. }
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::ModelFormat(_)
        )
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
