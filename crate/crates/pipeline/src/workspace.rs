//! A project directory opened for work: one writer at a time, readers see
//! immutable snapshots and never wait for the writer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use roomtrace_core::ingest::ReprojectionDatabase;
use roomtrace_core::materials::MeasurementDatabase;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{PipelineError, Result};
use crate::ops::{self, Operation};
use crate::project::Project;

type DbKey = (String, String, String, u64);

pub struct Workspace {
    dir: PathBuf,
    project: RwLock<Arc<Project>>,
    writer: Mutex<()>,
    db_cache: Mutex<Option<(DbKey, Arc<ReprojectionDatabase>)>>,
    materials_cache: Mutex<Option<(Option<String>, Arc<MeasurementDatabase>)>>,
}

/// Differences found when comparing a replayed project with its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub operations: usize,
    /// Artifact roles whose hashes differ or exist on one side only.
    pub mismatched: Vec<String>,
}

impl Workspace {
    fn with_project(dir: &Path, project: Project) -> Self {
        Self {
            dir: dir.to_path_buf(),
            project: RwLock::new(Arc::new(project)),
            writer: Mutex::new(()),
            db_cache: Mutex::new(None),
            materials_cache: Mutex::new(None),
        }
    }

    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self::with_project(dir, Project::load(dir)?))
    }

    pub fn init(dir: &Path, force: bool) -> Result<Self> {
        Ok(Self::with_project(dir, Project::init(dir, force)?))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// The current project state; later writes do not affect it.
    pub fn snapshot(&self) -> Arc<Project> {
        self.project.read().expect("project lock").clone()
    }

    /// Runs `op`, appends it to the log and persists the project. Writers
    /// queue on each other; the published snapshot changes only on success.
    pub fn apply(&self, mut op: Operation) -> Result<Value> {
        let _writer = self.writer.lock().expect("writer lock");
        let mut next = (*self.snapshot()).clone();
        let outcome = ops::execute(self, &mut next, &mut op)?;
        next.append_log(op, outcome.inputs, outcome.outputs);
        next.save(&self.dir)?;
        *self.project.write().expect("project lock") = Arc::new(next);
        Ok(outcome.value)
    }

    /// The scaled reprojection database of `project`, cached per input
    /// hashes and scale.
    pub fn database(&self, project: &Project, stage: &'static str) -> Result<Arc<ReprojectionDatabase>> {
        let inputs = project.require_inputs(stage)?;
        let key = (
            inputs.cameras.sha256.clone(),
            inputs.images.sha256.clone(),
            inputs.points.sha256.clone(),
            project.scale.factor.to_bits(),
        );
        let mut cache = self.db_cache.lock().expect("cache lock");
        if let Some((k, db)) = cache.as_ref() {
            if *k == key {
                return Ok(db.clone());
            }
        }
        let db = Arc::new(project.database(&self.dir, stage)?);
        *cache = Some((key, db.clone()));
        Ok(db)
    }

    pub fn measurements(&self, project: &Project) -> Result<Arc<MeasurementDatabase>> {
        let key = project.materials.database.as_ref().map(|a| a.sha256.clone());
        let mut cache = self.materials_cache.lock().expect("cache lock");
        if let Some((k, db)) = cache.as_ref() {
            if *k == key {
                return Ok(db.clone());
            }
        }
        let db = Arc::new(project.measurement_database(&self.dir)?);
        *cache = Some((key, db.clone()));
        Ok(db)
    }

    /// Re-applies every logged operation of `source` to this (fresh)
    /// workspace. Recorded inputs must hash as they did originally; the
    /// report lists artifacts whose hashes came out different.
    pub fn replay(&self, source: &Project) -> Result<ReplayReport> {
        for entry in &source.log {
            self.apply(entry.op.clone())?;
            let now = self.snapshot();
            let replayed = &now.log.last().expect("just logged").inputs;
            for (key, hash) in &entry.inputs {
                if key.starts_with("file:") && replayed.get(key) != Some(hash) {
                    return Err(PipelineError::InputChanged { path: key["file:".len()..].to_string() });
                }
            }
        }
        let (a, b) = (source.artifact_hashes(), self.snapshot().artifact_hashes());
        let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
        keys.sort();
        keys.dedup();
        let mismatched = keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect();
        Ok(ReplayReport {
            operations: source.log.len(),
            mismatched,
        })
    }

    /// Artifact hashes of the current state, keyed by role.
    pub fn artifact_hashes(&self) -> BTreeMap<String, String> {
        self.snapshot().artifact_hashes()
    }
}
