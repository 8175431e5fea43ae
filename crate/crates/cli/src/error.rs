use std::path::{Path, PathBuf};

use triadground::corpus_io::{CheckpointError, EmbeddingError, ParseError, TriadTsvError};
use triadground::infer::InferError;
use triadground::model::ModelError;
use triadground::scene::SceneError;
use triadground::train::TrainError;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MISSING_FILE: i32 = 2;
pub const EXIT_BAD_CONFIG: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: file not found", .0.display())]
    MissingFile(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingFile(_) => EXIT_MISSING_FILE,
            CliError::Config(_) => EXIT_BAD_CONFIG,
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }

    /// Wraps an error raised while reading or writing `path`.
    pub fn at(path: &Path, err: impl std::fmt::Display) -> CliError {
        CliError::Failed(format!("{}: {err}", path.display()))
    }

    pub fn io(path: &Path, err: std::io::Error) -> CliError {
        if err.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile(path.to_path_buf())
        } else {
            CliError::at(path, err)
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            TrainError::NonFinite { .. } => CliError::Invariant(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Infer(i) => i.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<InferError> for CliError {
    fn from(e: InferError) -> Self {
        match e {
            InferError::Weights(m) => CliError::Config(format!("score weights {m}")),
            InferError::Model(m) => m.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<TriadTsvError> for CliError {
    fn from(e: TriadTsvError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Failed(e.to_string())
    }
}
