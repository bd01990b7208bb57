use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("degenerate graph: node {index} has zero degree")]
    DegenerateGraph { index: usize },

    #[error("degenerate patch at point {index}: all neighbor offsets vanish")]
    DegeneratePatch { index: usize },

    #[error("degenerate frame at point {index}")]
    DegenerateFrame { index: usize },

    #[error("{what} did not converge (residual {residual:e})")]
    ConvergenceFailure { what: String, residual: f64 },

    #[error("views cannot be aligned: overlap graph has {} components", components.len())]
    AlignmentImpossible { components: Vec<Vec<usize>> },

    #[error("stage `{stage}` failed: {source}")]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

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
