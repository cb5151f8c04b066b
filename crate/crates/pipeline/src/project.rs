//! The project file: inputs, editing state, produced artifacts and the
//! operation log, stored as canonical JSON beside its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use roomtrace_core::geometry::{ExportReport, MeshReport, PlaneId};
use roomtrace_core::ingest::{parse_sfm_text, ImageId, PointId, ReprojectionDatabase};
use roomtrace_core::masking::MaskSet;
use roomtrace_core::materials::{
    load_measurements, MaterialAssignment, MeasurementDatabase, MeasurementId, RowRejection,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};
use crate::ops::{GeometryParams, Operation, SimulateParams};

pub const SCHEMA_VERSION: u32 = 1;
pub const PROJECT_FILE: &str = "project.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Sorted keys, two-space indentation, shortest round-trip floats and a
/// trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // `Value` objects are ordered maps, so re-serializing sorts every key
    let tree = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&tree)?;
    s.push('\n');
    Ok(s)
}

/// A file beside the project, by relative path and content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

impl ArtifactRef {
    pub fn resolve(&self, dir: &Path) -> PathBuf {
        dir.join(&self.path)
    }

    /// Reads the file and checks it still has the recorded hash.
    pub fn read(&self, dir: &Path) -> Result<Vec<u8>> {
        let path = self.resolve(dir);
        let bytes = fs::read(&path).map_err(PipelineError::file(&path))?;
        if sha256_hex(&bytes) != self.sha256 {
            return Err(PipelineError::Tampered {
                path: self.path.clone(),
                expected: self.sha256.clone(),
            });
        }
        Ok(bytes)
    }

    pub fn read_string(&self, dir: &Path) -> Result<String> {
        String::from_utf8(self.read(dir)?).map_err(|e| PipelineError::Invalid(format!("{}: {e}", self.path)))
    }
}

/// Stores `bytes` under `<subdir>/<stem>-<hash prefix>.<ext>`. Content
/// addressing means a file is never rewritten once a record points at it.
pub fn write_artifact(dir: &Path, subdir: &str, stem: &str, ext: &str, bytes: &[u8]) -> Result<ArtifactRef> {
    let sha256 = sha256_hex(bytes);
    let rel = format!("{subdir}/{stem}-{}.{ext}", &sha256[..12]);
    let path = dir.join(&rel);
    if !path.exists() {
        let parent = path.parent().expect("artifact path has a parent");
        fs::create_dir_all(parent).map_err(PipelineError::file(parent))?;
        let tmp = path.with_extension(format!("{ext}.tmp"));
        fs::write(&tmp, bytes).map_err(PipelineError::file(&tmp))?;
        fs::rename(&tmp, &path).map_err(PipelineError::file(&path))?;
    }
    Ok(ArtifactRef { path: rel, sha256 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    /// Directory the SfM text files were imported from.
    pub sfm_source: String,
    pub cameras: ArtifactRef,
    pub images: ArtifactRef,
    pub points: ArtifactRef,
    /// Original rasters, looked up by photo name.
    pub photo_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleStep {
    Marker { a: PointId, b: PointId, distance: f64, factor: f64 },
    Factor { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    /// Product of all step factors, relative to the imported coordinates.
    pub factor: f64,
    pub steps: Vec<ScaleStep>,
}

impl Default for ScaleRecord {
    fn default() -> Self {
        Self {
            factor: 1.0,
            steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaterialsRecord {
    /// Loaded measurement CSV; `None` is the bundled sample.
    pub database: Option<ArtifactRef>,
    pub rejected: Vec<RowRejection>,
    pub assignments: Vec<MaterialAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub params: GeometryParams,
    pub cloud_filtered: ArtifactRef,
    pub cloud_clean: ArtifactRef,
    pub planes: Option<ArtifactRef>,
    pub mesh: ArtifactRef,
    pub plane_materials: BTreeMap<PlaneId, Option<MeasurementId>>,
    pub report: MeshReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub stl: ArtifactRef,
    pub sidecar: ArtifactRef,
    pub forced: bool,
    pub report: ExportReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub id: u32,
    pub params: SimulateParams,
    pub wav: ArtifactRef,
    pub summary: ArtifactRef,
    pub histogram: Option<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuralizationRecord {
    pub id: u32,
    pub rir: u32,
    pub input: ArtifactRef,
    pub output: ArtifactRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    pub op: Operation,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub schema_version: u32,
    pub inputs: Option<Inputs>,
    pub scale: ScaleRecord,
    pub reduced_photos: Option<Vec<ImageId>>,
    pub masks: MaskSet,
    pub materials: MaterialsRecord,
    pub geometry: Option<GeometryRecord>,
    pub export: Option<ExportRecord>,
    pub simulations: Vec<SimulationRecord>,
    pub auralizations: Vec<AuralizationRecord>,
    pub log: Vec<LogEntry>,
}

impl Default for Project {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            inputs: None,
            scale: ScaleRecord::default(),
            reduced_photos: None,
            masks: MaskSet::default(),
            materials: MaterialsRecord::default(),
            geometry: None,
            export: None,
            simulations: Vec::new(),
            auralizations: Vec::new(),
            log: Vec::new(),
        }
    }
}

impl Project {
    pub fn file(dir: &Path) -> PathBuf {
        dir.join(PROJECT_FILE)
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.schema_version != SCHEMA_VERSION {
            return Err(PipelineError::SchemaVersion {
                found: v.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::file(dir);
        if !path.exists() {
            return Err(PipelineError::NoProject(dir.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(&path).map_err(PipelineError::file(&path))?)
    }

    /// Atomic replace of the project file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::file(dir);
        let tmp = dir.join(format!("{PROJECT_FILE}.tmp"));
        fs::write(&tmp, self.to_canonical_json()?).map_err(PipelineError::file(&tmp))?;
        fs::rename(&tmp, &path).map_err(PipelineError::file(&path))?;
        Ok(())
    }

    /// Creates an empty project; an existing one is only replaced with `force`.
    pub fn init(dir: &Path, force: bool) -> Result<Self> {
        if Self::file(dir).exists() && !force {
            return Err(PipelineError::ProjectExists(dir.to_path_buf()));
        }
        fs::create_dir_all(dir).map_err(PipelineError::file(dir))?;
        let project = Self::default();
        project.save(dir)?;
        Ok(project)
    }

    pub fn require_inputs(&self, stage: &'static str) -> Result<&Inputs> {
        self.inputs.as_ref().ok_or(PipelineError::MissingPrerequisite { stage, needs: "import" })
    }

    /// The imported reconstruction with the recorded scale applied.
    pub fn database(&self, dir: &Path, stage: &'static str) -> Result<ReprojectionDatabase> {
        let inputs = self.require_inputs(stage)?;
        let mut db = parse_sfm_text(
            &inputs.cameras.read_string(dir)?,
            &inputs.images.read_string(dir)?,
            &inputs.points.read_string(dir)?,
        )?;
        db.scale_by(self.scale.factor)?;
        Ok(db)
    }

    pub fn measurement_database(&self, dir: &Path) -> Result<MeasurementDatabase> {
        match &self.materials.database {
            None => Ok(MeasurementDatabase::bundled()),
            Some(csv) => Ok(load_measurements(csv.read(dir)?.as_slice())?.database),
        }
    }

    /// Photos the editing steps work on: the reduced set when there is one.
    pub fn working_photos(&self, db: &ReprojectionDatabase) -> Vec<ImageId> {
        match &self.reduced_photos {
            Some(ids) => ids.clone(),
            None => db.photos().keys().copied().collect(),
        }
    }

    /// Hashes of every artifact the project references, keyed by role.
    pub fn artifact_hashes(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let mut put = |k: String, a: &ArtifactRef| {
            out.insert(k, a.sha256.clone());
        };
        if let Some(i) = &self.inputs {
            put("inputs.cameras".into(), &i.cameras);
            put("inputs.images".into(), &i.images);
            put("inputs.points".into(), &i.points);
        }
        if let Some(db) = &self.materials.database {
            put("materials.database".into(), db);
        }
        if let Some(g) = &self.geometry {
            put("geometry.cloud_filtered".into(), &g.cloud_filtered);
            put("geometry.cloud_clean".into(), &g.cloud_clean);
            if let Some(p) = &g.planes {
                put("geometry.planes".into(), p);
            }
            put("geometry.mesh".into(), &g.mesh);
        }
        if let Some(e) = &self.export {
            put("export.stl".into(), &e.stl);
            put("export.sidecar".into(), &e.sidecar);
        }
        for s in &self.simulations {
            put(format!("simulation.{}.wav", s.id), &s.wav);
            put(format!("simulation.{}.summary", s.id), &s.summary);
            if let Some(h) = &s.histogram {
                put(format!("simulation.{}.histogram", s.id), h);
            }
        }
        for a in &self.auralizations {
            put(format!("auralization.{}.output", a.id), &a.output);
        }
        out
    }

    pub(crate) fn append_log(&mut self, op: Operation, inputs: BTreeMap<String, String>, outputs: BTreeMap<String, String>) {
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let seq = self.log.last().map_or(1, |e| e.seq + 1);
        self.log.push(LogEntry {
            seq,
            timestamp_ms,
            op,
            inputs,
            outputs,
        });
    }
}
