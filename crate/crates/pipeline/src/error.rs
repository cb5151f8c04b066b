use std::path::PathBuf;

use roomtrace_core::acoustics::AcousticsError;
use roomtrace_core::geometry::GeometryError;
use roomtrace_core::ingest::IngestError;
use roomtrace_core::masking::MaskingError;
use roomtrace_core::materials::MaterialsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0} already holds a project; pass --force to overwrite it")]
    ProjectExists(PathBuf),
    #[error("no project at {0}")]
    NoProject(PathBuf),
    #[error("project schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("{stage} needs {needs} first")]
    MissingPrerequisite { stage: &'static str, needs: &'static str },
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("invalid parameters for {stage}: {message}")]
    Parameters { stage: String, message: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error("artifact {path} changed on disk (expected sha256 {expected})")]
    Tampered { path: String, expected: String },
    #[error("input {path} changed since it was recorded")]
    InputChanged { path: String },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Masking(#[from] MaskingError),
    #[error(transparent)]
    Materials(#[from] MaterialsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Acoustics(#[from] AcousticsError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("project file: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub(crate) fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| PipelineError::File { path, source }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
