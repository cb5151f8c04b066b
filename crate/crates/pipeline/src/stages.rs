//! The long-running stages: reconstruction, validation, export,
//! simulation and auralization.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;

use roomtrace_core::acoustics::{
    convolve, histogram_csv, hybrid_rir, ism_polyhedral, read_wav, receiver_from_photo, schroeder_curve, t30,
    write_wav, EnergyLedger, HybridParams, ReverbPrediction, SceneConfig, SimulationScene, WavSignal,
};
use roomtrace_core::geometry::{
    annotate_materials, apply_sidecar, ball_pivot, close_shell, estimate_normals, export_bytes, fill_holes,
    filter_objects, parse_sidecar, read_ply, read_stl, reassign_identities, remove_outliers, segment_planes,
    substitute_object, triangulate_planes, validate_mesh, voxel_downsample, write_ply, AnnotatedMesh, FacetMaterial,
    Placement, Replacement,
};
use roomtrace_core::ingest::{PointId, ReprojectionDatabase};
use roomtrace_core::masking::MaskSet;
use roomtrace_core::materials::{MeasurementDatabase, MeasurementId};
use roomtrace_core::Vec3;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{PipelineError, Result};
use crate::ops::{
    category_set, masks_hash, AuralizeParams, ExportParams, GeometryParams, Outcome, SimulateParams, SimulationMethod,
    SurfaceMethod, ValidateParams,
};
use crate::project::{
    canonical_json, sha256_hex, write_artifact, ArtifactRef, AuralizationRecord, ExportRecord, GeometryRecord, Project,
    SimulationRecord,
};
use crate::workspace::Workspace;

/// Width of the decay-curve bins in simulation summaries.
pub const DECAY_CURVE_DT: f64 = 1e-3;

fn input_hashes(project: &Project) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if let Some(i) = &project.inputs {
        out.insert("inputs.cameras".into(), i.cameras.sha256.clone());
        out.insert("inputs.images".into(), i.images.sha256.clone());
        out.insert("inputs.points".into(), i.points.sha256.clone());
    }
    out.insert("masks".into(), masks_hash(project)?);
    out.insert(
        "materials.database".into(),
        project.materials.database.as_ref().map_or_else(|| "bundled".to_string(), |a| a.sha256.clone()),
    );
    out.insert("scale".into(), format!("{:?}", project.scale.factor));
    Ok(out)
}

fn load_mesh(ws: &Workspace, artifact: &ArtifactRef) -> Result<AnnotatedMesh> {
    Ok(serde_json::from_slice(&artifact.read(ws.dir())?)?)
}

fn mesh_artifact(ws: &Workspace, mesh: &AnnotatedMesh) -> Result<ArtifactRef> {
    write_artifact(ws.dir(), "geometry", "mesh", "json", canonical_json(mesh)?.as_bytes())
}

/// Facet materials of a surface mesh by majority over the masks covering
/// its three vertex identities; ties go to the first material name.
fn annotate_by_vertices(
    mesh: &mut AnnotatedMesh,
    db: &ReprojectionDatabase,
    masks: &MaskSet,
    mdb: &MeasurementDatabase,
) -> Result<()> {
    let nearest = reassign_identities(&mesh.vertices, db)?;
    let identity: Vec<PointId> = mesh
        .vertex_identity
        .iter()
        .zip(nearest)
        .map(|(own, near)| own.unwrap_or(near))
        .collect();
    let by_identity = masks.masks_by_identity();
    for f in 0..mesh.facet_count() {
        let mut votes: BTreeMap<MeasurementId, usize> = BTreeMap::new();
        for v in mesh.triangles[f] {
            for mask in by_identity.get(&identity[v]).into_iter().flatten() {
                if let Some(m) = masks.get(*mask).ok().and_then(|m| m.material_ref) {
                    if mdb.get(m).is_ok() {
                        *votes.entry(m).or_default() += 1;
                    }
                }
            }
        }
        let winner = votes.iter().max_by(|a, b| {
            a.1.cmp(b.1).then_with(|| {
                let (na, nb) = (&mdb.get(*a.0).expect("voted").name, &mdb.get(*b.0).expect("voted").name);
                nb.cmp(na).then(b.0.cmp(a.0))
            })
        });
        if let Some((m, _)) = winner {
            let entry = mdb.get(*m)?;
            mesh.set_facet_material(
                f,
                FacetMaterial {
                    measurement_id: *m,
                    name: entry.name.clone(),
                    spectrum: entry.spectrum.clone(),
                },
            );
        }
    }
    Ok(())
}

/// Cloud from the reprojection database, object filtering and
/// substitution, outlier removal, optional downsampling, then either a
/// closed plane shell or a ball-pivoted surface, annotated from the masks.
pub(crate) fn reconstruct(ws: &Workspace, project: &mut Project, p: &mut GeometryParams) -> Result<Outcome> {
    let dir = ws.dir();
    let db = ws.database(project, "reconstruct")?;
    let mdb = ws.measurements(project)?;
    let mut inputs = input_hashes(project)?;
    let mut warnings = Vec::new();

    let raw = roomtrace_core::geometry::PointCloud::from_database(&db);
    let include = p.include_categories.as_deref().map(category_set);
    let mut filtered = filter_objects(&raw, &project.masks, include.as_ref(), &category_set(&p.exclude_categories));
    for (i, s) in p.substitutions.iter_mut().enumerate() {
        s.ply = std::fs::canonicalize(&s.ply).map_err(PipelineError::file(&s.ply))?;
        let text = std::fs::read_to_string(&s.ply).map_err(PipelineError::file(&s.ply))?;
        inputs.insert(format!("file:substitution.{i}"), sha256_hex(text.as_bytes()));
        let targets: BTreeSet<PointId> = project
            .masks
            .iter()
            .filter(|m| m.category_label == s.category)
            .flat_map(|m| m.identities().iter().copied())
            .collect();
        if targets.is_empty() {
            return Err(PipelineError::Invalid(format!("no mask identities carry category `{}`", s.category)));
        }
        let sub = substitute_object(&filtered, &targets, Replacement::Cloud(read_ply(&text)?), Placement::Auto)?;
        filtered = sub.cloud;
    }
    let (mut clean, removed) = remove_outliers(&filtered, p.outlier_k, p.outlier_ratio)?;
    if let Some(v) = p.voxel {
        clean = voxel_downsample(&clean, v)?;
    }

    let (mesh, planes, plane_materials) = match p.method {
        SurfaceMethod::Planes => {
            let seg = segment_planes(&clean, p.tau, p.iterations, p.min_inliers, p.max_planes, p.seed)?;
            if seg.planes.len() < 4 {
                warnings.push(format!("only {} planes found; a closed shell needs at least 4", seg.planes.len()));
            }
            let shell = close_shell(&seg.planes);
            let mut mesh = triangulate_planes(&shell)?;
            let winners = annotate_materials(&mut mesh, &shell, &project.masks, &mdb);
            (mesh, Some(shell), winners)
        }
        SurfaceMethod::BallPivot => {
            let oriented = estimate_normals(&clean, p.normal_k)?;
            let mut mesh = ball_pivot(&oriented, &p.pivot_radii)?;
            annotate_by_vertices(&mut mesh, &db, &project.masks, &mdb)?;
            (mesh, None, BTreeMap::new())
        }
    };
    let report = validate_mesh(&mesh);
    if project.masks.is_empty() {
        warnings.push("no masks yet: facets are unannotated".to_string());
    }
    if !report.unannotated_facets.is_empty() {
        warnings.push(format!(
            "{} of {} facets have no material",
            report.unannotated_facets.len(),
            mesh.facet_count()
        ));
    }
    if !report.watertight {
        warnings.push(format!("mesh is not watertight ({} boundary loops)", report.boundary_loops.len()));
    }

    let cloud_filtered = write_artifact(dir, "geometry", "cloud-filtered", "ply", write_ply(&filtered).as_bytes())?;
    let cloud_clean = write_artifact(dir, "geometry", "cloud-clean", "ply", write_ply(&clean).as_bytes())?;
    let planes = match &planes {
        Some(pl) => Some(write_artifact(dir, "geometry", "planes", "json", canonical_json(pl)?.as_bytes())?),
        None => None,
    };
    let mesh_ref = mesh_artifact(ws, &mesh)?;

    let mut outputs = BTreeMap::new();
    outputs.insert("geometry.cloud_filtered".into(), cloud_filtered.sha256.clone());
    outputs.insert("geometry.cloud_clean".into(), cloud_clean.sha256.clone());
    if let Some(pl) = &planes {
        outputs.insert("geometry.planes".into(), pl.sha256.clone());
    }
    outputs.insert("geometry.mesh".into(), mesh_ref.sha256.clone());
    let value = json!({
        "points": { "raw": raw.len(), "filtered": filtered.len(), "clean": clean.len(), "outliers": removed.len() },
        "planes": planes.as_ref().map(|_| plane_materials.len()),
        "facets": mesh.facet_count(),
        "volume": report.signed_volume,
        "watertight": report.watertight,
        "unannotated": report.unannotated_facets.len(),
        "warnings": warnings,
    });
    project.geometry = Some(GeometryRecord {
        params: p.clone(),
        cloud_filtered,
        cloud_clean,
        planes,
        mesh: mesh_ref,
        plane_materials,
        report,
        warnings,
    });
    project.export = None;
    Ok(Outcome { value, inputs, outputs })
}

pub(crate) fn validate(ws: &Workspace, project: &mut Project, p: &ValidateParams) -> Result<Outcome> {
    let geometry = project.geometry.as_mut().expect("prerequisite checked");
    let mut mesh = load_mesh(ws, &geometry.mesh)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("geometry.mesh".to_string(), geometry.mesh.sha256.clone());
    let mut outputs = BTreeMap::new();
    let mut fill = None;
    if let Some(max) = p.fill_holes {
        let (filled, report) = fill_holes(&mesh, max);
        if !report.filled.is_empty() {
            mesh = filled;
            geometry.mesh = mesh_artifact(ws, &mesh)?;
            outputs.insert("geometry.mesh".to_string(), geometry.mesh.sha256.clone());
            project.export = None;
        }
        fill = Some(report);
    }
    let report = validate_mesh(&mesh);
    let geometry = project.geometry.as_mut().expect("prerequisite checked");
    geometry.report = report.clone();
    Ok(Outcome {
        value: json!({ "report": report, "valid": report.is_valid(), "fill": fill }),
        inputs,
        outputs,
    })
}

pub(crate) fn export(ws: &Workspace, project: &mut Project, p: &ExportParams) -> Result<Outcome> {
    let geometry = project.geometry.as_ref().expect("prerequisite checked");
    let mesh = load_mesh(ws, &geometry.mesh)?;
    let (stl, sidecar, report) = export_bytes(&mesh, p.force)?;
    let stl = write_artifact(ws.dir(), "export", "mesh", "stl", &stl)?;
    let sidecar = write_artifact(ws.dir(), "export", "mesh", "sidecar.json", sidecar.as_bytes())?;
    let mut o = Outcome::value(json!({ "stl": stl.path, "sidecar": sidecar.path, "report": report }));
    o.inputs.insert("geometry.mesh".into(), geometry.mesh.sha256.clone());
    o.outputs.insert("export.stl".into(), stl.sha256.clone());
    o.outputs.insert("export.sidecar".into(), sidecar.sha256.clone());
    project.export = Some(ExportRecord {
        stl,
        sidecar,
        forced: p.force,
        report,
    });
    Ok(o)
}

/// The exported STL with its sidecar materials: what simulations run on.
pub fn exported_mesh(ws: &Workspace, project: &Project) -> Result<AnnotatedMesh> {
    let export = project.export.as_ref().ok_or(PipelineError::MissingPrerequisite {
        stage: "simulate",
        needs: "export-stl",
    })?;
    let mut mesh = read_stl(&export.stl.read(ws.dir())?)?;
    apply_sidecar(&mut mesh, &parse_sidecar(&export.sidecar.read_string(ws.dir())?)?)?;
    Ok(mesh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub method: SimulationMethod,
    pub source: Vec3,
    pub receiver: Vec3,
    pub sample_rate: u32,
    pub samples: usize,
    pub energy: f64,
    pub peak_sample: Option<usize>,
    pub peak_amplitude: Option<f64>,
    pub bands: Vec<f64>,
    /// Per band; `None` where the 35 dB fit range is not reached.
    pub t30: Vec<Option<f64>>,
    pub predictions: Vec<ReverbPrediction>,
    pub image_sources: usize,
    pub crossover: Option<f64>,
    pub ledger: Option<EnergyLedger>,
    pub decay_curve_dt: f64,
    /// Broadband Schroeder curve in dB, cut where it reaches silence.
    pub decay_curve_db: Vec<f64>,
    pub warnings: Vec<String>,
}

fn decay_curve(samples: &[f64], fs: u32) -> Vec<f64> {
    let per_bin = ((fs as f64 * DECAY_CURVE_DT).round() as usize).max(1);
    let energy: Vec<f64> = samples.chunks(per_bin).map(|c| c.iter().map(|s| s * s).sum()).collect();
    if !energy.iter().any(|e| *e > 0.0) {
        return Vec::new();
    }
    schroeder_curve(&energy).into_iter().take_while(|l| l.is_finite()).collect()
}

pub(crate) fn simulate(ws: &Workspace, project: &mut Project, p: &SimulateParams) -> Result<Outcome> {
    let export = project.export.as_ref().expect("prerequisite checked");
    let mut inputs = BTreeMap::new();
    inputs.insert("export.stl".to_string(), export.stl.sha256.clone());
    inputs.insert("export.sidecar".to_string(), export.sidecar.sha256.clone());
    let mesh = exported_mesh(ws, project)?;
    let bad = |message: &str| PipelineError::Parameters {
        stage: "simulate".into(),
        message: message.into(),
    };
    let source = p.source.ok_or_else(|| bad("`source` is required"))?;
    let receiver = match (p.receiver_photo, p.receiver) {
        (Some(image), _) => {
            let db = ws.database(project, "simulate")?;
            receiver_from_photo(&db, image)?.position
        }
        (None, Some(r)) => r,
        (None, None) => return Err(bad("`receiver` or `receiver_photo` is required")),
    };
    let scene = SimulationScene::new(
        mesh,
        SceneConfig {
            source,
            source_power: p.source_power,
            receiver,
            capture_radius: p.capture_radius,
            scattering: p.scattering,
            seed: p.seed,
            render: p.render.clone(),
        },
    )?;
    let (ir, image_sources, crossover, rays) = match p.method {
        SimulationMethod::Ism => {
            let res = ism_polyhedral(&scene, p.ism_order, p.allow_beyond_guard)?;
            (res.ir, res.sources.len(), None, None)
        }
        SimulationMethod::Hybrid => {
            let res = hybrid_rir(
                &scene,
                &HybridParams {
                    ism_order: p.ism_order,
                    allow_beyond_guard: p.allow_beyond_guard,
                    rays: p.rays.clone(),
                    crossover: p.crossover,
                },
            )?;
            (res.ir, res.early_sources.len(), Some(res.crossover), res.rays)
        }
    };
    let mut warnings = Vec::new();
    if ir.energy() == 0.0 {
        warnings.push("impulse response is silent".to_string());
    }
    let peak = ir.peak();
    let summary = SimulationSummary {
        method: p.method,
        source,
        receiver,
        sample_rate: ir.sample_rate,
        samples: ir.samples.len(),
        energy: ir.energy(),
        peak_sample: peak.map(|p| p.0),
        peak_amplitude: peak.map(|p| p.1),
        bands: ir.bands.clone(),
        t30: (0..ir.bands.len()).map(|b| t30(&ir, Some(b)).ok()).collect(),
        predictions: ReverbPrediction::for_scene(&scene)?,
        image_sources,
        crossover,
        ledger: rays.as_ref().map(|r| r.ledger.clone()),
        decay_curve_dt: DECAY_CURVE_DT,
        decay_curve_db: decay_curve(&ir.samples, ir.sample_rate),
        warnings,
    };
    let dir = ws.dir();
    let wav = write_wav(&WavSignal {
        sample_rate: ir.sample_rate,
        samples: ir.samples.clone(),
    })?;
    let wav = write_artifact(dir, "simulations", "rir", "wav", &wav)?;
    let summary_ref = write_artifact(dir, "simulations", "summary", "json", canonical_json(&summary)?.as_bytes())?;
    let histogram = match &rays {
        Some(r) => Some(write_artifact(
            dir,
            "simulations",
            "histogram",
            "csv",
            histogram_csv(&r.bands, r.bin_width, &r.histograms).as_bytes(),
        )?),
        None => None,
    };
    let id = project.simulations.last().map_or(1, |s| s.id + 1);
    let mut outputs = BTreeMap::new();
    outputs.insert(format!("simulation.{id}.wav"), wav.sha256.clone());
    outputs.insert(format!("simulation.{id}.summary"), summary_ref.sha256.clone());
    if let Some(h) = &histogram {
        outputs.insert(format!("simulation.{id}.histogram"), h.sha256.clone());
    }
    let value = json!({ "simulation": id, "wav": wav.path, "summary": summary });
    project.simulations.push(SimulationRecord {
        id,
        params: p.clone(),
        wav,
        summary: summary_ref,
        histogram,
    });
    Ok(Outcome { value, inputs, outputs })
}

pub(crate) fn auralize(ws: &Workspace, project: &mut Project, p: &AuralizeParams) -> Result<Outcome> {
    let record = project
        .simulations
        .iter()
        .find(|s| s.id == p.rir)
        .ok_or_else(|| PipelineError::NotFound(format!("simulation {}", p.rir)))?;
    let dir = ws.dir();
    let ir = read_wav(Cursor::new(record.wav.read(dir)?))?;
    let dry = std::fs::read(&p.signal).map_err(PipelineError::file(&p.signal))?;
    let signal = read_wav(Cursor::new(&dry))?;
    let wet = convolve(&ir.samples, ir.sample_rate, &signal.samples, signal.sample_rate, p.normalize)?;
    let samples = wet.len();
    let out = write_wav(&WavSignal {
        sample_rate: signal.sample_rate,
        samples: wet,
    })?;
    let mut inputs = BTreeMap::new();
    inputs.insert(format!("simulation.{}.wav", p.rir), record.wav.sha256.clone());
    let input = write_artifact(dir, "auralizations", "input", "wav", &dry)?;
    inputs.insert("file:signal".into(), input.sha256.clone());
    let output = write_artifact(dir, "auralizations", "output", "wav", &out)?;
    let id = project.auralizations.last().map_or(1, |a| a.id + 1);
    let mut outputs = BTreeMap::new();
    outputs.insert(format!("auralization.{id}.output"), output.sha256.clone());
    let value = json!({ "auralization": id, "output": output.path, "samples": samples });
    project.auralizations.push(AuralizationRecord {
        id,
        rir: p.rir,
        input,
        output,
    });
    Ok(Outcome { value, inputs, outputs })
}
