use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration, parameter layout or shape.
    #[error("configuration error: {0}")]
    Config(String),

    /// A forward evaluation produced something unusable (non-finite loss, ...).
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("training step {step}: non-finite value in loss term `{term}`")]
    NonFiniteLoss { step: usize, term: String },

    #[error("{path}: line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("pseudo-label round {round} produced no labels (threshold {threshold} too high?)")]
    EmptyPseudoLabels { round: usize, threshold: f64 },

    #[error("artifact {path} was produced with config hash {found}, expected {expected}")]
    ArtifactMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
