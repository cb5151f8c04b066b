//! Every project mutation as a serializable operation. The operation log
//! stores these values verbatim, so replaying a log is applying its
//! operations in order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use roomtrace_core::acoustics::{RayTraceParams, RenderSettings};
use roomtrace_core::geom2d::Vec2;
use roomtrace_core::ingest::{parse_sfm_text, ImageId, PointId};
use roomtrace_core::masking::MaskId;
use roomtrace_core::materials::{fuse_query, load_measurements, MaterialAssignment, MeasurementId};
use roomtrace_core::Vec3;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{PipelineError, Result};
use crate::project::{canonical_json, sha256_hex, write_artifact, Inputs, Project, ScaleRecord, ScaleStep};
use crate::stages;
use crate::workspace::Workspace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "operation", content = "parameters", rename_all = "kebab-case")]
pub enum Operation {
    Import(ImportParams),
    Scale(ScaleParams),
    ReducePhotos(ReduceParams),
    MaskImport(MaskImportParams),
    MaskCreate(MaskCreateParams),
    MaskDelete(MaskRef),
    MaskExtrapolate(ExtrapolateParams),
    MaskMerge(MergeParams),
    MaskDivide(DivideParams),
    MaskRegenerate(MaskRef),
    MaterialsLoad(MaterialsLoadParams),
    MaterialAssign(AssignParams),
    MaterialsAutoAssign(AutoAssignParams),
    Reconstruct(GeometryParams),
    Validate(ValidateParams),
    ExportStl(ExportParams),
    Simulate(SimulateParams),
    Auralize(AuralizeParams),
}

impl Operation {
    /// Builds an operation from a stage name and its JSON parameters;
    /// missing fields take their defaults.
    pub fn from_stage(stage: &str, params: Value) -> Result<Self> {
        let params = if params.is_null() { json!({}) } else { params };
        serde_json::from_value(json!({ "operation": stage, "parameters": params })).map_err(|e| {
            if Self::STAGES.contains(&stage) {
                PipelineError::Parameters {
                    stage: stage.to_string(),
                    message: e.to_string(),
                }
            } else {
                PipelineError::UnknownStage(stage.to_string())
            }
        })
    }

    pub const STAGES: [&'static str; 18] = [
        "import",
        "scale",
        "reduce-photos",
        "mask-import",
        "mask-create",
        "mask-delete",
        "mask-extrapolate",
        "mask-merge",
        "mask-divide",
        "mask-regenerate",
        "materials-load",
        "material-assign",
        "materials-auto-assign",
        "reconstruct",
        "validate",
        "export-stl",
        "simulate",
        "auralize",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Operation::Import(_) => "import",
            Operation::Scale(_) => "scale",
            Operation::ReducePhotos(_) => "reduce-photos",
            Operation::MaskImport(_) => "mask-import",
            Operation::MaskCreate(_) => "mask-create",
            Operation::MaskDelete(_) => "mask-delete",
            Operation::MaskExtrapolate(_) => "mask-extrapolate",
            Operation::MaskMerge(_) => "mask-merge",
            Operation::MaskDivide(_) => "mask-divide",
            Operation::MaskRegenerate(_) => "mask-regenerate",
            Operation::MaterialsLoad(_) => "materials-load",
            Operation::MaterialAssign(_) => "material-assign",
            Operation::MaterialsAutoAssign(_) => "materials-auto-assign",
            Operation::Reconstruct(_) => "reconstruct",
            Operation::Validate(_) => "validate",
            Operation::ExportStl(_) => "export-stl",
            Operation::Simulate(_) => "simulate",
            Operation::Auralize(_) => "auralize",
        }
    }

    /// Seeded operations take `seed` as an override.
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Operation::Reconstruct(p) => p.seed = seed,
            Operation::Simulate(p) => p.seed = seed,
            _ => {}
        }
    }

    /// Fails with the first missing stage this operation depends on.
    pub fn check_prerequisites(&self, project: &Project) -> Result<()> {
        let stage = self.name();
        let missing = |needs| Err(PipelineError::MissingPrerequisite { stage, needs });
        match self {
            Operation::Import(_) | Operation::MaterialsLoad(_) => Ok(()),
            Operation::Validate(_) | Operation::ExportStl(_) if project.geometry.is_none() => missing("reconstruct"),
            Operation::Simulate(_) if project.export.is_none() => missing("export-stl"),
            Operation::Auralize(_) if project.simulations.is_empty() => missing("simulate"),
            Operation::Validate(_) | Operation::ExportStl(_) | Operation::Simulate(_) | Operation::Auralize(_) => Ok(()),
            _ if project.inputs.is_none() => missing("import"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportParams {
    /// Directory holding `cameras.txt`, `images.txt` and `points3D.txt`.
    pub sfm_dir: PathBuf,
    #[serde(default)]
    pub photo_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleParams {
    Marker { a: PointId, b: PointId, distance: f64 },
    Factor { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReduceParams {
    /// Fraction of tracked identities the kept photos must observe.
    pub coverage: f64,
}

impl Default for ReduceParams {
    fn default() -> Self {
        Self { coverage: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskImportParams {
    pub document: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    roomtrace_core::masking::DEFAULT_CONFIDENCE_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskCreateParams {
    pub image_id: ImageId,
    pub polygon: Vec<[f64; 2]>,
    #[serde(default)]
    pub category_label: String,
    #[serde(default)]
    pub object_tag: String,
    #[serde(default)]
    pub material_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRef {
    pub mask: MaskId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolateParams {
    pub mask: MaskId,
    /// `None` extrapolates into every other working photo.
    #[serde(default)]
    pub target: Option<ImageId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    pub a: MaskId,
    pub b: MaskId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivideParams {
    pub mask: MaskId,
    pub cut: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialsLoadParams {
    pub csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignParams {
    pub mask: MaskId,
    /// `None` clears the assignment.
    pub measurement: Option<MeasurementId>,
    #[serde(default)]
    pub texture_attribute: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoAssignParams {
    /// Also replace existing assignments.
    pub overwrite: bool,
    /// Top suggestions scoring at or below this are not assigned.
    pub min_score: f64,
}

impl Default for AutoAssignParams {
    fn default() -> Self {
        Self {
            overwrite: false,
            min_score: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceMethod {
    /// RANSAC planes closed into a convex shell.
    Planes,
    BallPivot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionParams {
    /// Mask category whose identities are replaced.
    pub category: String,
    /// Replacement point cloud (PLY), placed by centroid and principal axes.
    pub ply: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryParams {
    pub method: SurfaceMethod,
    pub include_categories: Option<Vec<String>>,
    pub exclude_categories: Vec<String>,
    pub substitutions: Vec<SubstitutionParams>,
    pub outlier_k: usize,
    pub outlier_ratio: f64,
    pub voxel: Option<f64>,
    pub tau: f64,
    pub iterations: usize,
    pub min_inliers: usize,
    pub max_planes: usize,
    pub normal_k: usize,
    pub pivot_radii: Vec<f64>,
    pub seed: u64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            method: SurfaceMethod::Planes,
            include_categories: None,
            exclude_categories: Vec::new(),
            substitutions: Vec::new(),
            outlier_k: 8,
            outlier_ratio: 2.0,
            voxel: None,
            tau: 0.02,
            iterations: 400,
            min_inliers: 50,
            max_planes: 6,
            normal_k: 12,
            pivot_radii: vec![0.3, 0.6],
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateParams {
    /// Fill boundary loops of at most this many edges before validating.
    pub fill_holes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportParams {
    /// Export despite validation problems, recording them as warnings.
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulationMethod {
    /// Image sources up to `ism_order` on the exported mesh.
    Ism,
    /// Image sources before the crossover, ray-traced tail after it.
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateParams {
    pub method: SimulationMethod,
    pub source: Option<Vec3>,
    pub receiver: Option<Vec3>,
    /// Places the receiver at this photo's camera center instead.
    pub receiver_photo: Option<ImageId>,
    pub source_power: f64,
    pub capture_radius: f64,
    pub scattering: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub render: RenderSettings,
    pub ism_order: usize,
    pub allow_beyond_guard: bool,
    pub rays: RayTraceParams,
    pub crossover: Option<f64>,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            method: SimulationMethod::Hybrid,
            source: None,
            receiver: None,
            receiver_photo: None,
            source_power: 1.0,
            capture_radius: roomtrace_core::acoustics::DEFAULT_CAPTURE_RADIUS,
            scattering: 0.0,
            seed: 0,
            render: RenderSettings::default(),
            ism_order: 2,
            allow_beyond_guard: false,
            rays: RayTraceParams::default(),
            crossover: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuralizeParams {
    /// Simulation id whose impulse response is used.
    pub rir: u32,
    /// Dry input WAV.
    pub signal: PathBuf,
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

/// What an applied operation read and wrote, plus its JSON result.
pub(crate) struct Outcome {
    pub value: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Outcome {
    pub(crate) fn value(value: Value) -> Self {
        Self {
            value,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(PipelineError::file(path))
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(PipelineError::file(path))
}

pub(crate) fn masks_hash(project: &Project) -> Result<String> {
    Ok(sha256_hex(canonical_json(&project.masks)?.as_bytes()))
}

fn vertices(polygon: &[[f64; 2]]) -> Vec<Vec2> {
    polygon.iter().map(|p| Vec2::new(p[0], p[1])).collect()
}

/// Rebuilds the assignment list from the masks' material references,
/// keeping recorded texture attributes of masks that still exist.
fn sync_assignments(project: &mut Project) {
    let textures: BTreeMap<MaskId, Option<String>> = project
        .materials
        .assignments
        .iter()
        .map(|a| (a.mask_ref, a.texture_attribute.clone()))
        .collect();
    project.materials.assignments = project
        .masks
        .iter()
        .filter_map(|m| {
            m.material_ref.map(|measurement| MaterialAssignment {
                mask_ref: m.id,
                category_label: m.category_label.clone(),
                texture_attribute: textures.get(&m.id).cloned().flatten(),
                measurement_ref: measurement,
            })
        })
        .collect();
}

/// Downstream results built on coordinates that just changed.
fn drop_geometry(project: &mut Project) {
    project.geometry = None;
    project.export = None;
}

/// Applies `op` to `project`, normalizing its recorded parameters (input
/// paths become absolute). Artifacts are written before returning; the
/// caller persists the project.
pub(crate) fn execute(ws: &Workspace, project: &mut Project, op: &mut Operation) -> Result<Outcome> {
    op.check_prerequisites(project)?;
    let dir = ws.dir().to_path_buf();
    let mut outcome = match op {
        Operation::Import(p) => import(&dir, project, p)?,
        Operation::Scale(p) => {
            let mut db = (*ws.database(project, "scale")?).clone();
            let (step, factor) = match p {
                ScaleParams::Marker { a, b, distance } => {
                    let factor = db.scale_by_marker(*a, *b, *distance)?;
                    (
                        ScaleStep::Marker {
                            a: *a,
                            b: *b,
                            distance: *distance,
                            factor,
                        },
                        factor,
                    )
                }
                ScaleParams::Factor { factor } => {
                    db.scale_by(*factor)?;
                    (ScaleStep::Factor { factor: *factor }, *factor)
                }
            };
            project.scale.factor *= factor;
            project.scale.steps.push(step);
            drop_geometry(project);
            Outcome::value(json!({ "factor": factor, "total_factor": project.scale.factor }))
        }
        Operation::ReducePhotos(p) => {
            let db = ws.database(project, "reduce-photos")?;
            let kept = db.reduce_photo_set(p.coverage)?;
            project.reduced_photos = Some(kept.clone());
            Outcome::value(json!({ "kept": kept, "of": db.photos().len() }))
        }
        Operation::MaskImport(p) => {
            p.document = absolute(&p.document)?;
            let bytes = read_input(&p.document)?;
            let text = String::from_utf8(bytes).map_err(|e| PipelineError::Invalid(format!("suggestion document: {e}")))?;
            let db = ws.database(project, "mask-import")?;
            let ids = project.masks.import(&db, &text, p.threshold)?;
            let mut o = Outcome::value(json!({ "created": ids }));
            o.inputs.insert("file:document".into(), sha256_hex(text.as_bytes()));
            o
        }
        Operation::MaskCreate(p) => {
            let db = ws.database(project, "mask-create")?;
            let id = project
                .masks
                .create(&db, p.image_id, vertices(&p.polygon), &p.category_label, &p.object_tag)?;
            project.masks.get_mut(id)?.material_hint = p.material_hint.clone();
            Outcome::value(json!({ "mask": id }))
        }
        Operation::MaskDelete(p) => {
            project.masks.remove(p.mask)?;
            Outcome::value(json!({ "deleted": p.mask }))
        }
        Operation::MaskExtrapolate(p) => {
            let db = ws.database(project, "mask-extrapolate")?;
            let source_image = project.masks.get(p.mask)?.image;
            let targets = match p.target {
                Some(t) => vec![t],
                None => project.working_photos(&db).into_iter().filter(|t| *t != source_image).collect(),
            };
            let mut created = Vec::new();
            let mut not_visible = Vec::new();
            for target in targets {
                match project.masks.extrapolate(&db, p.mask, target)? {
                    Some(id) => created.push(json!({ "target": target, "mask": id })),
                    None => not_visible.push(target),
                }
            }
            Outcome::value(json!({ "created": created, "not_visible": not_visible }))
        }
        Operation::MaskMerge(p) => {
            let id = project.masks.merge(p.a, p.b)?;
            Outcome::value(json!({ "mask": id }))
        }
        Operation::MaskDivide(p) => {
            let db = ws.database(project, "mask-divide")?;
            let (a, b) = project.masks.divide(&db, p.mask, &vertices(&p.cut))?;
            Outcome::value(json!({ "masks": [a, b] }))
        }
        Operation::MaskRegenerate(p) => {
            let db = ws.database(project, "mask-regenerate")?;
            let kept = project.masks.regenerate(&db, p.mask)?;
            Outcome::value(json!({ "mask": p.mask, "visible": kept }))
        }
        Operation::MaterialsLoad(p) => {
            p.csv = absolute(&p.csv)?;
            let bytes = read_input(&p.csv)?;
            let report = load_measurements(bytes.as_slice())?;
            let csv = write_artifact(&dir, "materials", "measurements", "csv", &bytes)?;
            let mut o = Outcome::value(json!({
                "entries": report.database.len(),
                "rejected": report.rejected,
            }));
            o.inputs.insert("file:csv".into(), csv.sha256.clone());
            o.outputs.insert("materials.database".into(), csv.sha256.clone());
            project.materials.database = Some(csv);
            project.materials.rejected = report.rejected;
            o
        }
        Operation::MaterialAssign(p) => {
            if let Some(m) = p.measurement {
                ws.measurements(project)?.get(m)?;
            }
            project.masks.assign_material(p.mask, p.measurement)?;
            project.materials.assignments.retain(|a| a.mask_ref != p.mask);
            if let (Some(measurement), Ok(mask)) = (p.measurement, project.masks.get(p.mask)) {
                project.materials.assignments.push(MaterialAssignment {
                    mask_ref: p.mask,
                    category_label: mask.category_label.clone(),
                    texture_attribute: p.texture_attribute.clone(),
                    measurement_ref: measurement,
                });
            }
            Outcome::value(json!({ "mask": p.mask, "measurement": p.measurement }))
        }
        Operation::MaterialsAutoAssign(p) => {
            let mdb = ws.measurements(project)?;
            let mut assigned = Vec::new();
            let ids: Vec<MaskId> = project
                .masks
                .iter()
                .filter(|m| p.overwrite || m.material_ref.is_none())
                .map(|m| m.id)
                .collect();
            for id in ids {
                let mask = project.masks.get(id)?;
                let query = fuse_query(mask.material_hint.as_deref().or(Some(&mask.category_label)), None);
                let Some(top) = mdb.suggest_measurements(&query, 1)?.into_iter().next() else {
                    continue;
                };
                if top.score > p.min_score {
                    project.masks.assign_material(id, Some(top.id))?;
                    assigned.push(json!({ "mask": id, "measurement": top.id, "score": top.score, "query": query }));
                }
            }
            Outcome::value(json!({ "assigned": assigned }))
        }
        Operation::Reconstruct(p) => stages::reconstruct(ws, project, p)?,
        Operation::Validate(p) => stages::validate(ws, project, p)?,
        Operation::ExportStl(p) => stages::export(ws, project, p)?,
        Operation::Simulate(p) => stages::simulate(ws, project, p)?,
        Operation::Auralize(p) => {
            p.signal = absolute(&p.signal)?;
            stages::auralize(ws, project, p)?
        }
    };
    if op_touches_masks(op) {
        sync_assignments(project);
        outcome.outputs.insert("masks".into(), masks_hash(project)?);
    }
    Ok(outcome)
}

fn op_touches_masks(op: &Operation) -> bool {
    matches!(
        op,
        Operation::Import(_)
            | Operation::MaskImport(_)
            | Operation::MaskCreate(_)
            | Operation::MaskDelete(_)
            | Operation::MaskExtrapolate(_)
            | Operation::MaskMerge(_)
            | Operation::MaskDivide(_)
            | Operation::MaskRegenerate(_)
            | Operation::MaterialAssign(_)
            | Operation::MaterialsAutoAssign(_)
    )
}

/// Copies the SfM text files into the project and resets everything
/// derived from the previous reconstruction.
fn import(dir: &Path, project: &mut Project, p: &mut ImportParams) -> Result<Outcome> {
    p.sfm_dir = absolute(&p.sfm_dir)?;
    if let Some(photos) = &p.photo_dir {
        let photos = absolute(photos)?;
        if !photos.is_dir() {
            return Err(PipelineError::Invalid(format!("{} is not a directory", photos.display())));
        }
        p.photo_dir = Some(photos);
    }
    let read = |name: &str| -> Result<String> {
        let path = p.sfm_dir.join(name);
        fs::read_to_string(&path).map_err(PipelineError::file(&path))
    };
    let (cameras, images, points) = (read("cameras.txt")?, read("images.txt")?, read("points3D.txt")?);
    let db = parse_sfm_text(&cameras, &images, &points)?;
    let inputs = Inputs {
        sfm_source: p.sfm_dir.display().to_string(),
        cameras: write_artifact(dir, "inputs", "cameras", "txt", cameras.as_bytes())?,
        images: write_artifact(dir, "inputs", "images", "txt", images.as_bytes())?,
        points: write_artifact(dir, "inputs", "points3D", "txt", points.as_bytes())?,
        photo_dir: p.photo_dir.as_ref().map(|d| d.display().to_string()),
    };
    let mut o = Outcome::value(json!({
        "cameras": db.cameras().len(),
        "photos": db.photos().len(),
        "points": db.points().len(),
    }));
    for (k, a) in [("cameras", &inputs.cameras), ("images", &inputs.images), ("points", &inputs.points)] {
        o.inputs.insert(format!("file:{k}"), a.sha256.clone());
        o.outputs.insert(format!("inputs.{k}"), a.sha256.clone());
    }
    let radius = project.masks.radius;
    project.inputs = Some(inputs);
    project.scale = ScaleRecord::default();
    project.reduced_photos = None;
    project.masks = Default::default();
    project.masks.radius = radius;
    project.materials.assignments.clear();
    drop_geometry(project);
    project.simulations.clear();
    project.auralizations.clear();
    Ok(o)
}

/// Categories of `labels` as an owned set.
pub(crate) fn category_set(labels: &[String]) -> BTreeSet<String> {
    labels.iter().cloned().collect()
}
