use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("capacity: {0}")]
    Capacity(String),

    #[error("cell ({row}, {col}) is outside the {rows}x{cols} grid")]
    Bounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("unsupported instruction: {0}")]
    UnsupportedInstruction(String),

    #[error("unknown word `{0}`")]
    Vocabulary(String),

    #[error("no feasible instruction for family {0}")]
    EmptyCandidates(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("integrity: {0}")]
    Integrity(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("adaptation: {0}")]
    Adaptation(String),

    #[error("no relabeled samples survived the filter; play more demos or lower the threshold")]
    NoSamples,

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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Tags an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage tags removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
