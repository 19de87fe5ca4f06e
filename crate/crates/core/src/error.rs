use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest row {row}: cannot load {path}: {reason}")]
    Load { row: usize, path: String, reason: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("split error: {0}")]
    Split(String),

    #[error("holdout error: class {class} has {count} sample(s), at least 2 are required")]
    Holdout { class: u32, count: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("detector error: {0}")]
    Detector(String),

    #[error("gating violation: real sample {index} in the batch did not pass the semantic filter")]
    GatingViolation { index: usize },

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("the semantic filter removed every training sample")]
    EmptyFilteredSet,

    #[error("{stage} diverged at iteration {iteration} (non-finite loss){}", checkpoint_note(.checkpoint))]
    Divergence {
        stage: &'static str,
        iteration: u64,
        checkpoint: Option<PathBuf>,
    },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("registry error: {0}")]
    Registry(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("stage `{stage}` failed: {source}{}", checkpoint_note(.checkpoint))]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
        checkpoint: Option<PathBuf>,
    },
}

fn checkpoint_note(checkpoint: &Option<PathBuf>) -> String {
    match checkpoint {
        Some(p) => format!(" (resume from {})", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
