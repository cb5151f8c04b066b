use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_mesh, AnnotatedMesh, CloudPoint, FacetMaterial, GeometryError, MeshReport, PointCloud};
use crate::ingest::PointId;
use crate::materials::{AbsorptionSpectrum, MeasurementId};
use crate::Vec3;

const STL_HEADER: &[u8] = b"binary STL with acoustic sidecar";

fn stl_error(message: impl Into<String>) -> GeometryError {
    GeometryError::Format {
        format: "STL",
        message: message.into(),
    }
}

fn ply_error(message: impl Into<String>) -> GeometryError {
    GeometryError::Format {
        format: "PLY",
        message: message.into(),
    }
}

/// Binary little-endian STL: 80-byte header, facet count, 50 bytes per facet.
pub fn write_stl(mesh: &AnnotatedMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.facet_count());
    let mut header = [0u8; 80];
    header[..STL_HEADER.len()].copy_from_slice(STL_HEADER);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.facet_count() as u32).to_le_bytes());
    for f in 0..mesh.facet_count() {
        let n = mesh.facet_normal(f);
        for v in std::iter::once(n).chain(mesh.corners(f)) {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

/// Parses binary STL, merging vertices with bit-identical coordinates.
pub fn read_stl(bytes: &[u8]) -> Result<AnnotatedMesh, GeometryError> {
    if bytes.len() < 84 {
        return Err(stl_error(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as usize;
    let expected = 84 + 50 * count;
    if bytes.len() != expected {
        return Err(stl_error(format!("{count} facets need {expected} bytes, got {}", bytes.len())));
    }
    let mut mesh = AnnotatedMesh::default();
    let mut index: HashMap<[u32; 3], usize> = HashMap::new();
    for f in 0..count {
        let rec = &bytes[84 + 50 * f..84 + 50 * (f + 1)];
        let mut tri = [0usize; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let base = 12 + 12 * k;
            let bits: [u32; 3] = std::array::from_fn(|c| {
                u32::from_le_bytes(rec[base + 4 * c..base + 4 * c + 4].try_into().expect("4 bytes"))
            });
            *slot = *index.entry(bits).or_insert_with(|| {
                let v = Vec3::new(
                    f32::from_bits(bits[0]) as f64,
                    f32::from_bits(bits[1]) as f64,
                    f32::from_bits(bits[2]) as f64,
                );
                mesh.vertices.push(v);
                mesh.vertex_identity.push(None);
                mesh.vertices.len() - 1
            });
        }
        mesh.push_facet(tri, super::FacetSource::Surface, None);
    }
    Ok(mesh)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarFacet {
    pub index: usize,
    pub measurement_id: Option<MeasurementId>,
    pub material: Option<String>,
    /// Band center in Hz to absorption coefficient.
    pub alphas: BTreeMap<u32, f64>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub facets: Vec<SidecarFacet>,
}

/// Facet index (STL order) to material, spectrum and provenance.
pub fn sidecar_json(mesh: &AnnotatedMesh) -> String {
    let facets = (0..mesh.facet_count())
        .map(|f| {
            let material = mesh.facet_material_entry(f);
            SidecarFacet {
                index: f,
                measurement_id: material.map(|m| m.measurement_id),
                material: material.map(|m| m.name.clone()),
                alphas: material
                    .map(|m| {
                        m.spectrum
                            .bands()
                            .iter()
                            .zip(m.spectrum.alphas())
                            .map(|(b, a)| (b.round() as u32, *a))
                            .collect()
                    })
                    .unwrap_or_default(),
                source: mesh.facet_source[f].to_string(),
            }
        })
        .collect();
    serde_json::to_string_pretty(&Sidecar { facets }).expect("sidecar serializes")
}

pub fn parse_sidecar(text: &str) -> Result<Sidecar, GeometryError> {
    serde_json::from_str(text).map_err(sidecar_error)
}

fn sidecar_error(e: impl fmt::Display) -> GeometryError {
    GeometryError::Format {
        format: "sidecar JSON",
        message: e.to_string(),
    }
}

/// Attaches the sidecar's materials to a mesh read back from its STL.
/// Facets with an empty spectrum stay unannotated.
pub fn apply_sidecar(mesh: &mut AnnotatedMesh, sidecar: &Sidecar) -> Result<(), GeometryError> {
    if sidecar.facets.len() != mesh.facet_count() {
        return Err(sidecar_error(format!(
            "{} sidecar entries for {} facets",
            sidecar.facets.len(),
            mesh.facet_count()
        )));
    }
    for (f, entry) in sidecar.facets.iter().enumerate() {
        if entry.index != f {
            return Err(sidecar_error(format!("entry {f} describes facet {}", entry.index)));
        }
        let Some(measurement_id) = entry.measurement_id else {
            continue;
        };
        if entry.alphas.is_empty() {
            continue;
        }
        let spectrum = AbsorptionSpectrum::new(
            entry.alphas.keys().map(|b| *b as f64).collect(),
            entry.alphas.values().copied().collect(),
        )
        .map_err(|e| sidecar_error(format!("facet {f}: {e}")))?;
        mesh.set_facet_material(
            f,
            FacetMaterial {
                measurement_id,
                name: entry.material.clone().unwrap_or_default(),
                spectrum,
            },
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    pub validation: MeshReport,
    pub warnings: Vec<String>,
    pub stl_bytes: usize,
}

/// STL bytes, sidecar JSON and the validation behind them. Without
/// `force`, a mesh that is not watertight or has unannotated facets is
/// refused; with it, the problems become warnings.
pub fn export_bytes(mesh: &AnnotatedMesh, force: bool) -> Result<(Vec<u8>, String, ExportReport), GeometryError> {
    let validation = validate_mesh(mesh);
    let mut warnings = Vec::new();
    if !validation.watertight {
        if !force {
            return Err(GeometryError::NotWatertight);
        }
        warnings.push(format!("mesh is not watertight ({} boundary loops)", validation.boundary_loops.len()));
    }
    if !validation.unannotated_facets.is_empty() {
        if !force {
            return Err(GeometryError::Unannotated(validation.unannotated_facets.clone()));
        }
        warnings.push(format!("{} facets have no material", validation.unannotated_facets.len()));
    }
    let stl = write_stl(mesh);
    let report = ExportReport {
        validation,
        warnings,
        stl_bytes: stl.len(),
    };
    Ok((stl, sidecar_json(mesh), report))
}

/// Writes the STL and its sidecar under the rules of [`export_bytes`].
pub fn export_stl(
    mesh: &AnnotatedMesh,
    stl_path: &Path,
    sidecar_path: &Path,
    force: bool,
) -> Result<ExportReport, GeometryError> {
    let (stl, sidecar, report) = export_bytes(mesh, force)?;
    fs::write(stl_path, &stl)?;
    fs::write(sidecar_path, sidecar)?;
    Ok(report)
}

/// ASCII PLY with normals, colors and an `identity` scalar (-1 for none).
/// Points without a normal are written with a zero normal.
pub fn write_ply(cloud: &PointCloud) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", cloud.len()).expect("string write");
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(s, "property double {p}").expect("string write");
    }
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nproperty int64 identity\nend_header\n");
    for p in &cloud.points {
        let n = p.normal.unwrap_or_else(Vec3::zeros);
        let id = p.identity.map(|i| i.0 as i64).unwrap_or(-1);
        writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {}",
            p.position.x, p.position.y, p.position.z, n.x, n.y, n.z, p.color[0], p.color[1], p.color[2], id
        )
        .expect("string write");
    }
    s
}

/// Reads the ASCII PLY layout written by [`write_ply`]; extra properties are
/// ignored and missing optional ones default.
pub fn read_ply(text: &str) -> Result<PointCloud, GeometryError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(ply_error("missing magic line"));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines.next().ok_or_else(|| ply_error("header has no end_header"))?.trim();
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] if *fmt != "ascii" => return Err(ply_error(format!("unsupported format {fmt}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| ply_error(format!("bad vertex count {n}")))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            _ => {}
        }
    }
    let count = count.ok_or_else(|| ply_error("no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(ply_error("vertex element lacks x, y or z")),
    };
    let normal_cols = (col("nx"), col("ny"), col("nz"));
    let color_cols = (col("red"), col("green"), col("blue"));
    let id_col = col("identity");
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let line = lines.next().ok_or_else(|| ply_error(format!("expected {count} vertices, got {i}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| ply_error(format!("vertex {i}: bad number {t}"))))
            .collect::<Result<_, _>>()?;
        if vals.len() < props.len() {
            return Err(ply_error(format!("vertex {i} has {} of {} values", vals.len(), props.len())));
        }
        let normal = match normal_cols {
            (Some(a), Some(b), Some(c)) => {
                let n = Vec3::new(vals[a], vals[b], vals[c]);
                (n.norm_squared() > 0.0).then_some(n)
            }
            _ => None,
        };
        let color = match color_cols {
            (Some(r), Some(g), Some(b)) => [vals[r] as u8, vals[g] as u8, vals[b] as u8],
            _ => [0, 0, 0],
        };
        let identity = id_col.and_then(|c| (vals[c] >= 0.0).then(|| PointId(vals[c] as u64)));
        points.push(CloudPoint {
            identity,
            position: Vec3::new(vals[x], vals[y], vals[z]),
            normal,
            color,
        });
    }
    Ok(PointCloud::new(points))
}
