use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation (non-finite point, t ≤ 0, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A measure or profile could not be built from the supplied parameters.
    #[error("invalid construction: {0}")]
    Construction(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The flow produced a non-finite state.
    #[error("integration diverged at t = {time}{}", point.map(|i| format!(" (point {i})")).unwrap_or_default())]
    Diverged { time: f64, point: Option<usize> },

    #[error("quadrature did not converge: last estimates {previous} and {last} after {refinements} refinements")]
    NonConvergence {
        previous: f64,
        last: f64,
        refinements: usize,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Attach a pipeline stage label to an error.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
