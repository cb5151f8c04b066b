use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{GeometryError, Plane, PlaneId};
use crate::ingest::PointId;
use crate::masking::{MaskId, MaskSet};
use crate::materials::{AbsorptionSpectrum, MeasurementDatabase, MeasurementId};
use crate::Vec3;

/// Plane boundary vertices closer than this are merged.
pub const WELD_TOLERANCE: f64 = 1e-6;
const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetMaterial {
    pub measurement_id: MeasurementId,
    pub name: String,
    pub spectrum: AbsorptionSpectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetSource {
    Plane(PlaneId),
    Mask(MaskId),
    /// Added by hole filling.
    Hole,
    /// Surface reconstruction or imported geometry.
    Surface,
}

impl fmt::Display for FacetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FacetSource::Plane(id) => write!(f, "plane:{}", id.0),
            FacetSource::Mask(id) => write!(f, "mask:{}", id.0),
            FacetSource::Hole => f.write_str("hole"),
            FacetSource::Surface => f.write_str("surface"),
        }
    }
}

/// Triangle mesh with a per-facet material (index into `materials`) and
/// provenance of every facet.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_identity: Vec<Option<PointId>>,
    pub materials: Vec<FacetMaterial>,
    pub facet_material: Vec<Option<usize>>,
    pub facet_source: Vec<FacetSource>,
}

impl AnnotatedMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        let (nv, nf) = (vertices.len(), triangles.len());
        Self {
            vertices,
            triangles,
            vertex_identity: vec![None; nv],
            materials: Vec::new(),
            facet_material: vec![None; nf],
            facet_source: vec![FacetSource::Surface; nf],
        }
    }

    pub fn facet_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, f: usize) -> [Vec3; 3] {
        self.triangles[f].map(|i| self.vertices[i])
    }

    /// `(b - a) x (c - a)`; its length is twice the area.
    pub fn facet_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.corners(f);
        (b - a).cross(&(c - a))
    }

    pub fn facet_area(&self, f: usize) -> f64 {
        0.5 * self.facet_cross(f).norm()
    }

    /// Unit right-hand normal, zero for a degenerate facet.
    pub fn facet_normal(&self, f: usize) -> Vec3 {
        let n = self.facet_cross(f);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|f| {
                let [a, b, c] = self.corners(f);
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn facet_spectrum(&self, f: usize) -> Option<&AbsorptionSpectrum> {
        self.facet_material[f].map(|m| &self.materials[m].spectrum)
    }

    pub fn facet_material_entry(&self, f: usize) -> Option<&FacetMaterial> {
        self.facet_material[f].map(|m| &self.materials[m])
    }

    pub fn set_facet_material(&mut self, f: usize, material: FacetMaterial) {
        let slot = match self.materials.iter().position(|m| m.measurement_id == material.measurement_id) {
            Some(i) => i,
            None => {
                self.materials.push(material);
                self.materials.len() - 1
            }
        };
        self.facet_material[f] = Some(slot);
    }

    /// Appends a facet carrying the given provenance and palette slot.
    pub fn push_facet(&mut self, tri: [usize; 3], source: FacetSource, material: Option<usize>) {
        self.triangles.push(tri);
        self.facet_source.push(source);
        self.facet_material.push(material);
    }

    pub fn push_vertex(&mut self, v: Vec3, identity: Option<PointId>) -> usize {
        self.vertices.push(v);
        self.vertex_identity.push(identity);
        self.vertices.len() - 1
    }
}

fn weld(mesh: &mut AnnotatedMesh, v: Vec3) -> usize {
    if let Some(i) = mesh.vertices.iter().position(|w| (w - v).norm() <= WELD_TOLERANCE) {
        return i;
    }
    mesh.push_vertex(v, None)
}

/// Fan-triangulates every non-empty plane boundary, welding shared vertices.
pub fn triangulate_planes(planes: &[Plane]) -> Result<AnnotatedMesh, GeometryError> {
    let mut mesh = AnnotatedMesh::default();
    for plane in planes {
        if plane.boundary.is_empty() {
            continue;
        }
        let mut loop_ids: Vec<usize> = plane.boundary.iter().map(|v| weld(&mut mesh, *v)).collect();
        loop_ids.dedup();
        if loop_ids.len() > 1 && loop_ids[0] == loop_ids[loop_ids.len() - 1] {
            loop_ids.pop();
        }
        let mut distinct = loop_ids.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 3 || distinct.len() != loop_ids.len() {
            return Err(GeometryError::DegenerateLoop(plane.id));
        }
        for k in 1..loop_ids.len() - 1 {
            mesh.push_facet([loop_ids[0], loop_ids[k], loop_ids[k + 1]], FacetSource::Plane(plane.id), None);
        }
    }
    Ok(mesh)
}

/// Facet materials of plane facets by majority vote over the masks covering
/// the plane's inlier identities (one vote per identity and mask); ties go
/// to the lexicographically first material name. Returns the winner per plane.
pub fn annotate_materials(
    mesh: &mut AnnotatedMesh,
    planes: &[Plane],
    masks: &MaskSet,
    db: &MeasurementDatabase,
) -> BTreeMap<PlaneId, Option<MeasurementId>> {
    let by_identity = masks.masks_by_identity();
    let mut winners = BTreeMap::new();
    for plane in planes {
        let mut votes: BTreeMap<MeasurementId, usize> = BTreeMap::new();
        for pid in &plane.inliers {
            for mask_id in by_identity.get(pid).into_iter().flatten() {
                if let Some(m) = masks.get(*mask_id).ok().and_then(|m| m.material_ref) {
                    if db.get(m).is_ok() {
                        *votes.entry(m).or_default() += 1;
                    }
                }
            }
        }
        let winner = votes
            .iter()
            .max_by(|a, b| {
                a.1.cmp(b.1).then_with(|| {
                    let (na, nb) = (&db.get(*a.0).expect("voted").name, &db.get(*b.0).expect("voted").name);
                    nb.cmp(na).then(b.0.cmp(a.0))
                })
            })
            .map(|(m, _)| *m);
        winners.insert(plane.id, winner);
        if let Some(m) = winner {
            let entry = db.get(m).expect("voted");
            let material = FacetMaterial {
                measurement_id: m,
                name: entry.name.clone(),
                spectrum: entry.spectrum.clone(),
            };
            for f in 0..mesh.facet_count() {
                if mesh.facet_source[f] == FacetSource::Plane(plane.id) {
                    mesh.set_facet_material(f, material.clone());
                }
            }
        }
    }
    winners
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshReport {
    pub indices_valid: bool,
    /// Every undirected edge borders exactly two facets.
    pub watertight: bool,
    /// No directed edge is used twice.
    pub consistently_oriented: bool,
    pub signed_volume: f64,
    /// Positive enclosed volume.
    pub volume_adequate: bool,
    pub degenerate_facets: Vec<usize>,
    pub non_manifold_edges: usize,
    pub boundary_loops: Vec<Vec<usize>>,
    pub unannotated_facets: Vec<usize>,
}

impl MeshReport {
    pub fn is_valid(&self) -> bool {
        self.indices_valid && self.watertight && self.consistently_oriented && self.volume_adequate && self.degenerate_facets.is_empty()
    }
}

fn edge_counts(mesh: &AnnotatedMesh) -> (BTreeMap<(usize, usize), usize>, HashMap<(usize, usize), usize>) {
    let mut undirected = BTreeMap::new();
    let mut directed = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *undirected.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            *directed.entry((a, b)).or_insert(0) += 1;
        }
    }
    (undirected, directed)
}

/// Directed edges with no twin, chained into loops following their direction.
fn boundary_loops(mesh: &AnnotatedMesh) -> Vec<Vec<usize>> {
    let (undirected, directed) = edge_counts(mesh);
    let mut next: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut edges: Vec<(usize, usize)> = directed
        .keys()
        .copied()
        .filter(|&(a, b)| undirected[&(a.min(b), a.max(b))] == 1)
        .collect();
    edges.sort_unstable();
    for &(a, b) in &edges {
        next.entry(a).or_default().push(b);
    }
    let mut loops = Vec::new();
    for &(start, _) in &edges {
        while let Some(first) = next.get_mut(&start).and_then(|v| (!v.is_empty()).then(|| v.remove(0))) {
            let mut lp = vec![start];
            let mut cur = first;
            while cur != start {
                lp.push(cur);
                match next.get_mut(&cur).and_then(|v| (!v.is_empty()).then(|| v.remove(0))) {
                    Some(n) => cur = n,
                    None => break,
                }
            }
            loops.push(lp);
        }
    }
    loops
}

/// Never fails; every problem is reported.
pub fn validate_mesh(mesh: &AnnotatedMesh) -> MeshReport {
    let nv = mesh.vertices.len();
    let indices_valid = mesh.triangles.iter().all(|t| t.iter().all(|&i| i < nv))
        && mesh.facet_material.len() == mesh.triangles.len()
        && mesh.facet_source.len() == mesh.triangles.len()
        && mesh.facet_material.iter().flatten().all(|&m| m < mesh.materials.len());
    if !indices_valid {
        return MeshReport {
            indices_valid,
            watertight: false,
            consistently_oriented: false,
            signed_volume: 0.0,
            volume_adequate: false,
            degenerate_facets: Vec::new(),
            non_manifold_edges: 0,
            boundary_loops: Vec::new(),
            unannotated_facets: Vec::new(),
        };
    }
    let (undirected, directed) = edge_counts(mesh);
    let signed_volume = mesh.signed_volume();
    MeshReport {
        indices_valid,
        watertight: !mesh.triangles.is_empty() && undirected.values().all(|&c| c == 2),
        consistently_oriented: directed.values().all(|&c| c == 1),
        signed_volume,
        volume_adequate: signed_volume > 0.0,
        degenerate_facets: (0..mesh.facet_count())
            .filter(|&f| mesh.facet_area(f) < DEGENERATE_AREA)
            .collect(),
        non_manifold_edges: undirected.values().filter(|&&c| c > 2).count(),
        boundary_loops: boundary_loops(mesh),
        unannotated_facets: (0..mesh.facet_count())
            .filter(|&f| mesh.facet_material[f].is_none())
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillReport {
    pub filled: Vec<Vec<usize>>,
    pub remaining: Vec<Vec<usize>>,
}

/// Closes boundary loops of at most `max_loop_edges` edges with a fan from
/// the loop centroid. New facets inherit the material of the facet across
/// their loop edge.
pub fn fill_holes(mesh: &AnnotatedMesh, max_loop_edges: usize) -> (AnnotatedMesh, FillReport) {
    let mut out = mesh.clone();
    let mut report = FillReport {
        filled: Vec::new(),
        remaining: Vec::new(),
    };
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (f, t) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            owner.insert((t[k], t[(k + 1) % 3]), f);
        }
    }
    for lp in boundary_loops(mesh) {
        if lp.len() < 3 || lp.len() > max_loop_edges {
            report.remaining.push(lp);
            continue;
        }
        let c = lp.iter().map(|&i| mesh.vertices[i]).sum::<Vec3>() / lp.len() as f64;
        let ci = out.push_vertex(c, None);
        for k in 0..lp.len() {
            let (a, b) = (lp[k], lp[(k + 1) % lp.len()]);
            let material = owner.get(&(a, b)).and_then(|&f| mesh.facet_material[f]);
            out.push_facet([b, a, ci], FacetSource::Hole, material);
        }
        report.filled.push(lp);
    }
    (out, report)
}
