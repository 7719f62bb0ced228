//! Crate-wide error type. Library code returns `Result<T>`; binaries decide
//! how failures map to exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dataset is empty after activity filtering")]
    EmptyDataset,

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error("requested {needed} target users but only {available} are eligible")]
    NoEligibleUsers { needed: usize, available: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("LiSSA diverged; increase scale/damping")]
    LissaDiverged,

    #[error("non-finite TD loss at epoch {epoch}")]
    NonFiniteTdLoss { epoch: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("target item group is empty")]
    EmptyTargetGroup,

    #[error("influence target sample set is empty")]
    EmptyTargets,

    #[error("every item group is exhausted")]
    GroupsExhausted,

    #[error("artifact {path} is not a {expected} snapshot (found {found})")]
    BadArtifact {
        path: String,
        expected: String,
        found: String,
    },

    #[error("{stage} stage failed")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an io error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage it surfaced in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
