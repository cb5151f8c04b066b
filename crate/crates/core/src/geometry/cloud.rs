use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{AnnotatedMesh, GeometryError};
use crate::ingest::{PointId, ReprojectionDatabase};
use crate::masking::MaskSet;
use crate::spatial::KdTree;
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub identity: Option<PointId>,
    pub position: Vec3,
    pub normal: Option<Vec3>,
    pub color: [u8; 3],
}

impl CloudPoint {
    pub fn new(identity: Option<PointId>, position: Vec3) -> Self {
        Self {
            identity,
            position,
            normal: None,
            color: [0, 0, 0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<CloudPoint>) -> Self {
        Self { points }
    }

    /// Every identity of the database, in identity order.
    pub fn from_database(db: &ReprojectionDatabase) -> Self {
        Self::new(
            db.points()
                .values()
                .map(|p| CloudPoint {
                    identity: Some(p.id),
                    position: p.position,
                    normal: None,
                    color: p.color,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn identities(&self) -> BTreeSet<PointId> {
        self.points.iter().filter_map(|p| p.identity).collect()
    }

    pub fn centroid(&self) -> Option<Vec3> {
        centroid(&self.positions())
    }

    /// Finite coordinates and unit normals.
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.position.iter().all(|c| c.is_finite()) {
                return Err(GeometryError::InvalidParameter(format!("point {i} is not finite")));
            }
            if let Some(n) = p.normal {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(GeometryError::InvalidParameter(format!("normal of point {i} is not unit length")));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn centroid(points: &[Vec3]) -> Option<Vec3> {
    if points.is_empty() {
        return None;
    }
    Some(points.iter().sum::<Vec3>() / points.len() as f64)
}

/// Centroid, eigenvalues ascending and matching unit eigenvectors (columns)
/// of the population covariance.
pub(crate) fn covariance_eigen(points: &[Vec3]) -> Option<(Vec3, [f64; 3], Matrix3<f64>)> {
    let c = centroid(points)?;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.map(|i| eig.eigenvalues[i]);
    let vectors = Matrix3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned()));
    Some((c, values, vectors))
}

/// Drops points whose mean distance to their `k` nearest neighbours exceeds
/// `mean + stddev_ratio * sigma` of that statistic over the cloud.
/// Returns the kept cloud and the identities of removed points.
pub fn remove_outliers(
    cloud: &PointCloud,
    k: usize,
    stddev_ratio: f64,
) -> Result<(PointCloud, Vec<PointId>), GeometryError> {
    if k == 0 {
        return Err(GeometryError::InvalidParameter("k must be at least 1".into()));
    }
    if cloud.len() <= k {
        return Err(GeometryError::TooFewPoints {
            needed: k + 1,
            got: cloud.len(),
        });
    }
    let tree = KdTree::new(cloud.positions());
    let stats: Vec<f64> = (0..cloud.len())
        .map(|i| {
            let nn = tree.knn(&cloud.points[i].position, k + 1);
            let dists: Vec<f64> = nn.iter().filter(|(j, _)| *j != i).take(k).map(|(_, d)| *d).collect();
            dists.iter().sum::<f64>() / dists.len() as f64
        })
        .collect();
    let n = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / n;
    let sigma = (stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + stddev_ratio * sigma;
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for (p, s) in cloud.points.iter().zip(&stats) {
        if *s > threshold {
            removed.extend(p.identity);
        } else {
            kept.push(p.clone());
        }
    }
    Ok((PointCloud::new(kept), removed))
}

/// One point per occupied voxel at the voxel centroid, carrying the identity
/// and color of the input point nearest that centroid. Output is in voxel
/// key order.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud, GeometryError> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(GeometryError::InvalidParameter(format!("voxel must be positive, got {voxel}")));
    }
    if cloud.is_empty() {
        return Ok(PointCloud::default());
    }
    let mut min = cloud.points[0].position;
    for p in &cloud.points {
        min = min.inf(&p.position);
    }
    let mut cells: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let q = (p.position - min) / voxel;
        cells
            .entry((q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64))
            .or_default()
            .push(i);
    }
    let out = cells
        .values()
        .map(|members| {
            let c = members.iter().map(|&i| cloud.points[i].position).sum::<Vec3>() / members.len() as f64;
            let nearest = members
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    (cloud.points[a].position - c)
                        .norm_squared()
                        .total_cmp(&(cloud.points[b].position - c).norm_squared())
                        .then(a.cmp(&b))
                })
                .expect("cell is non-empty");
            let normal_sum: Vec3 = members.iter().filter_map(|&i| cloud.points[i].normal).sum();
            let normal = (members.iter().all(|&i| cloud.points[i].normal.is_some()) && normal_sum.norm() > 1e-12)
                .then(|| normal_sum.normalize());
            CloudPoint {
                identity: cloud.points[nearest].identity,
                position: c,
                normal,
                color: cloud.points[nearest].color,
            }
        })
        .collect();
    Ok(PointCloud::new(out))
}

/// PCA normals over `k` neighbours, oriented consistently by breadth-first
/// propagation over the neighbour graph. Each component's seed faces the
/// cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud, GeometryError> {
    if k < 2 {
        return Err(GeometryError::InvalidParameter("k must be at least 2".into()));
    }
    if cloud.len() < 3 {
        return Err(GeometryError::TooFewPoints { needed: 3, got: cloud.len() });
    }
    let positions = cloud.positions();
    let tree = KdTree::new(positions.clone());
    let center = centroid(&positions).expect("non-empty");
    let neighbours: Vec<Vec<usize>> = positions
        .iter()
        .map(|p| tree.knn(p, (k + 1).min(positions.len())).into_iter().map(|x| x.0).collect())
        .collect();
    let mut normals: Vec<Vec3> = neighbours
        .iter()
        .map(|nb| {
            let pts: Vec<Vec3> = nb.iter().map(|&j| positions[j]).collect();
            let (_, _, vecs) = covariance_eigen(&pts).expect("non-empty");
            vecs.column(0).into_owned().normalize()
        })
        .collect();
    let mut visited = vec![false; positions.len()];
    for seed in 0..positions.len() {
        if visited[seed] {
            continue;
        }
        if normals[seed].dot(&(center - positions[seed])) < 0.0 {
            normals[seed] = -normals[seed];
        }
        visited[seed] = true;
        let mut queue = VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighbours[i] {
                if !visited[j] {
                    if normals[j].dot(&normals[i]) < 0.0 {
                        normals[j] = -normals[j];
                    }
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    let mut out = cloud.clone();
    for (p, n) in out.points.iter_mut().zip(normals) {
        p.normal = Some(n);
    }
    Ok(out)
}

/// Keeps or removes points by the category labels of the masks covering
/// their identity. Points covered by no mask are always kept.
pub fn filter_objects(
    cloud: &PointCloud,
    masks: &MaskSet,
    include: Option<&BTreeSet<String>>,
    exclude: &BTreeSet<String>,
) -> PointCloud {
    let mut labels: BTreeMap<PointId, BTreeSet<&str>> = BTreeMap::new();
    for mask in masks.iter() {
        for pid in mask.identities() {
            labels.entry(*pid).or_default().insert(mask.category_label.as_str());
        }
    }
    let keep = |p: &CloudPoint| {
        let Some(found) = p.identity.and_then(|id| labels.get(&id)) else {
            return true;
        };
        let included = include.map_or(true, |inc| found.iter().any(|l| inc.contains(*l)));
        included && !found.iter().any(|l| exclude.contains(*l))
    };
    PointCloud::new(cloud.points.iter().filter(|p| keep(p)).cloned().collect())
}

/// Identity of the nearest original point for every vertex (ties to the
/// lower identity).
pub fn reassign_identities(vertices: &[Vec3], db: &ReprojectionDatabase) -> Result<Vec<PointId>, GeometryError> {
    if db.points().is_empty() {
        return Err(GeometryError::TooFewPoints { needed: 1, got: 0 });
    }
    Ok(vertices
        .iter()
        .map(|v| db.nearest_identity(v).expect("database is non-empty").0)
        .collect())
}

#[derive(Debug, Clone)]
pub enum Replacement {
    Cloud(PointCloud),
    Mesh(AnnotatedMesh),
}

impl Replacement {
    fn into_points(self) -> Vec<CloudPoint> {
        match self {
            Replacement::Cloud(c) => c.points,
            Replacement::Mesh(m) => m
                .vertices
                .iter()
                .zip(&m.vertex_identity)
                .map(|(v, id)| CloudPoint::new(*id, *v))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    Rigid(Isometry3<f64>),
    /// Centroid translation plus principal-axis alignment.
    Auto,
}

#[derive(Debug, Clone)]
pub struct Substitution {
    pub cloud: PointCloud,
    /// Applied to the replacement.
    pub transform: Isometry3<f64>,
    pub removed: usize,
}

const AXIS_SIGN_EPS: f64 = 1e-9;
const AXIS_GAP_RATIO: f64 = 1e-3;

fn disambiguate(axis: Vec3) -> Vec3 {
    for c in [2, 0, 1] {
        if axis[c].abs() > AXIS_SIGN_EPS {
            return if axis[c] < 0.0 { -axis } else { axis };
        }
    }
    axis
}

/// Principal axes, largest variance first, signs fixed toward +z (then +x,
/// then +y) and completed to a right-handed frame.
fn principal_frame(points: &[Vec3]) -> Result<(Vec3, Matrix3<f64>), GeometryError> {
    let (c, values, vectors) = covariance_eigen(points).ok_or(GeometryError::EmptyTarget)?;
    let scale = values[2].max(f64::MIN_POSITIVE);
    if (values[2] - values[1]) / scale < AXIS_GAP_RATIO || (values[1] - values[0]) / scale < AXIS_GAP_RATIO {
        return Err(GeometryError::DegenerateAxes);
    }
    let e1 = disambiguate(vectors.column(2).into_owned());
    let e2 = disambiguate(vectors.column(1).into_owned());
    let e3 = e1.cross(&e2);
    Ok((c, Matrix3::from_columns(&[e1, e2, e3])))
}

/// Removes the points of `targets` and inserts the replacement, placed
/// rigidly or by aligning centroids and principal axes with the removed points.
pub fn substitute_object(
    cloud: &PointCloud,
    targets: &BTreeSet<PointId>,
    replacement: Replacement,
    placement: Placement,
) -> Result<Substitution, GeometryError> {
    if targets.is_empty() {
        return Err(GeometryError::EmptyTarget);
    }
    let (removed, mut kept): (Vec<CloudPoint>, Vec<CloudPoint>) = cloud
        .points
        .iter()
        .cloned()
        .partition(|p| p.identity.is_some_and(|id| targets.contains(&id)));
    if removed.is_empty() {
        return Err(GeometryError::EmptyTarget);
    }
    let incoming = replacement.into_points();
    let transform = match placement {
        Placement::Rigid(iso) => iso,
        Placement::Auto => {
            let target: Vec<Vec3> = removed.iter().map(|p| p.position).collect();
            let source: Vec<Vec3> = incoming.iter().map(|p| p.position).collect();
            let (ct, e) = principal_frame(&target)?;
            let (cr, f) = principal_frame(&source)?;
            let r = Rotation3::from_matrix_unchecked(e * f.transpose());
            let t = ct - r * cr;
            Isometry3::from_parts(Translation3::from(t), UnitQuaternion::from_rotation_matrix(&r))
        }
    };
    let count = removed.len();
    kept.extend(incoming.into_iter().map(|mut p| {
        p.position = transform.transform_point(&nalgebra::Point3::from(p.position)).coords;
        p.normal = p.normal.map(|n| transform.rotation * n);
        p
    }));
    Ok(Substitution {
        cloud: PointCloud::new(kept),
        transform,
        removed: count,
    })
}
