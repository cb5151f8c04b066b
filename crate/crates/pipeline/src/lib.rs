//! Project files, stage orchestration, job queue and HTTP service for
//! turning a photo reconstruction into an auralized room model.
//!
//! Every change to a project is an [`Operation`] applied through a
//! [`Workspace`]; the project file logs each one with the hashes of what it
//! read and wrote, so a log can be replayed and checked against its outputs.

pub mod error;
pub mod jobs;
pub mod ops;
pub mod project;
pub mod server;
pub mod stages;
pub mod workspace;

pub use error::{PipelineError, Result};
pub use jobs::{Job, JobQueue, JobState};
pub use ops::Operation;
pub use project::{canonical_json, sha256_hex, ArtifactRef, Project, SCHEMA_VERSION};
pub use stages::{exported_mesh, SimulationSummary};
pub use workspace::{ReplayReport, Workspace};
