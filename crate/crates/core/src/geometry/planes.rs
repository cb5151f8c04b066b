use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cloud::{centroid, covariance_eigen};
use super::{GeometryError, PlaneId, PointCloud};
use crate::geom2d::{self, Vec2};
use crate::ingest::PointId;
use crate::Vec3;

/// Plane `normal . x = offset` with its inliers and boundary loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub id: PlaneId,
    pub normal: Vec3,
    pub offset: f64,
    pub inliers: BTreeSet<PointId>,
    pub inlier_count: usize,
    /// Winds clockwise seen from the side the normal points to.
    pub boundary: Vec<Vec3>,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Orthonormal `(e1, e2)` with `e1 x e2 = n`.
pub(crate) fn plane_frame(n: &Vec3) -> (Vec3, Vec3) {
    let a = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vec3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let e1 = n.cross(&a).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Total least-squares plane: through the centroid, normal along the
/// smallest covariance eigenvector.
pub fn fit_plane_least_squares(points: &[Vec3]) -> Option<(Vec3, f64)> {
    if points.len() < 3 {
        return None;
    }
    let (c, _, vectors) = covariance_eigen(points)?;
    let n = vectors.column(0).into_owned().normalize();
    Some((n, n.dot(&c)))
}

fn inliers_of(points: &[Vec3], n: &Vec3, d: f64, tau: f64) -> Vec<usize> {
    (0..points.len()).filter(|&i| (n.dot(&points[i]) - d).abs() <= tau).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    /// Best three-point hypothesis and the inliers it counted.
    pub hypothesis: (Vec3, f64),
    pub hypothesis_inliers: Vec<usize>,
    /// Least-squares plane over the final inlier set.
    pub normal: Vec3,
    pub offset: f64,
    pub inliers: Vec<usize>,
}

/// One RANSAC plane. Hypothesis `i` draws from its own ChaCha stream
/// `(round << 32) | i`, and the best is the highest count with the lowest
/// index among equals, so the result does not depend on the worker count.
pub fn ransac_plane(points: &[Vec3], tau: f64, iterations: usize, seed: u64, round: u32) -> Option<RansacFit> {
    let n = points.len();
    if n < 3 || iterations == 0 {
        return None;
    }
    let hypothesis = |i: usize| -> (usize, usize, Option<(Vec3, f64)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((round as u64) << 32) | i as u64);
        let pick = rand::seq::index::sample(&mut rng, n, 3);
        let (a, b, c) = (points[pick.index(0)], points[pick.index(1)], points[pick.index(2)]);
        let cross = (b - a).cross(&(c - a));
        let scale = (b - a).norm_squared().max((c - a).norm_squared());
        if cross.norm() <= 1e-12 * scale || scale == 0.0 {
            return (0, i, None);
        }
        let normal = cross.normalize();
        let d = normal.dot(&a);
        let count = points.iter().filter(|p| (normal.dot(p) - d).abs() <= tau).count();
        (count, i, Some((normal, d)))
    };
    let best = (0..iterations)
        .into_par_iter()
        .map(hypothesis)
        .reduce_with(|x, y| if (y.0 > x.0) || (y.0 == x.0 && y.1 < x.1) { y } else { x })?;
    let (hn, hd) = best.2?;
    let hypothesis_inliers = inliers_of(points, &hn, hd, tau);
    if hypothesis_inliers.len() < 3 {
        return None;
    }
    let subset: Vec<Vec3> = hypothesis_inliers.iter().map(|&i| points[i]).collect();
    let (mut normal, mut offset) = fit_plane_least_squares(&subset)?;
    let mut inliers = inliers_of(points, &normal, offset, tau);
    if inliers.len() >= 3 {
        let subset: Vec<Vec3> = inliers.iter().map(|&i| points[i]).collect();
        (normal, offset) = fit_plane_least_squares(&subset)?;
    } else {
        inliers = hypothesis_inliers.clone();
    }
    Some(RansacFit {
        hypothesis: (hn, hd),
        hypothesis_inliers,
        normal,
        offset,
        inliers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub planes: Vec<Plane>,
    /// Indices into the input cloud, one list per plane.
    pub plane_points: Vec<Vec<usize>>,
    pub residual: PointCloud,
}

/// Sequential RANSAC extraction. Normals face the centroid of the full
/// input cloud, i.e. inward for a room shell.
pub fn segment_planes(
    cloud: &PointCloud,
    tau: f64,
    iterations: usize,
    min_inliers: usize,
    max_planes: usize,
    seed: u64,
) -> Result<Segmentation, GeometryError> {
    if cloud.len() < 3 {
        return Err(GeometryError::TooFewPoints { needed: 3, got: cloud.len() });
    }
    if !(tau > 0.0) {
        return Err(GeometryError::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let all = cloud.positions();
    let center = centroid(&all).expect("non-empty");
    let mut remaining: Vec<usize> = (0..cloud.len()).collect();
    let mut planes = Vec::new();
    let mut plane_points = Vec::new();
    while planes.len() < max_planes && remaining.len() >= 3 {
        let pts: Vec<Vec3> = remaining.iter().map(|&i| all[i]).collect();
        let Some(fit) = ransac_plane(&pts, tau, iterations, seed, planes.len() as u32) else {
            break;
        };
        if fit.inliers.len() < min_inliers.max(3) {
            break;
        }
        let (mut normal, mut offset) = (fit.normal, fit.offset);
        if normal.dot(&center) - offset < 0.0 {
            normal = -normal;
            offset = -offset;
        }
        let members: Vec<usize> = fit.inliers.iter().map(|&k| remaining[k]).collect();
        let mut plane = Plane {
            id: PlaneId(planes.len() as u32 + 1),
            normal,
            offset,
            inliers: members.iter().filter_map(|&i| cloud.points[i].identity).collect(),
            inlier_count: members.len(),
            boundary: Vec::new(),
        };
        let positions: Vec<Vec3> = members.iter().map(|&i| all[i]).collect();
        plane.boundary = plane_boundary(&plane, &positions).unwrap_or_default();
        let taken: BTreeSet<usize> = members.iter().copied().collect();
        remaining.retain(|i| !taken.contains(i));
        planes.push(plane);
        plane_points.push(members);
    }
    let residual = PointCloud::new(remaining.iter().map(|&i| cloud.points[i].clone()).collect());
    Ok(Segmentation {
        planes,
        plane_points,
        residual,
    })
}

/// Convex hull of the inliers projected onto the plane, lifted back onto it.
/// The loop winds so that its right-hand normal is `-normal`: facing out of
/// the room when plane normals face in.
pub fn plane_boundary(plane: &Plane, inliers: &[Vec3]) -> Result<Vec<Vec3>, GeometryError> {
    let (e1, e2) = plane_frame(&plane.normal);
    let flat: Vec<Vec2> = inliers.iter().map(|p| Vec2::new(p.dot(&e1), p.dot(&e2))).collect();
    let mut hull = geom2d::convex_hull(&flat);
    if hull.len() < 3 {
        return Err(GeometryError::Collinear);
    }
    hull.reverse();
    Ok(hull
        .iter()
        .map(|h| e1 * h.x + e2 * h.y + plane.normal * plane.offset)
        .collect())
}

fn clip(poly: &[Vec3], n: &Vec3, d: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let da = n.dot(&a) - d;
        let db = n.dot(&b) - d;
        if da >= 0.0 {
            out.push(a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            let t = da / (da - db);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Replaces every plane boundary by its face of the convex region where all
/// planes' signed distances are non-negative. Planes that contribute no face
/// come back with an empty boundary.
pub fn close_shell(planes: &[Plane]) -> Vec<Plane> {
    let pts: Vec<Vec3> = planes.iter().flat_map(|p| p.boundary.iter().copied()).collect();
    let center = centroid(&pts).unwrap_or_else(Vec3::zeros);
    let extent = pts.iter().map(|p| (p - center).norm()).fold(1.0, f64::max);
    let half = 10.0 * extent;
    planes
        .iter()
        .enumerate()
        .map(|(i, plane)| {
            let (e1, e2) = plane_frame(&plane.normal);
            let c = center - plane.normal * plane.signed_distance(&center);
            // right-hand normal -n, the same winding as `plane_boundary`
            let mut poly = vec![
                c + (e1 + e2) * half,
                c + (e1 - e2) * half,
                c + (-e1 - e2) * half,
                c + (-e1 + e2) * half,
            ];
            for (j, other) in planes.iter().enumerate() {
                if j != i && !poly.is_empty() {
                    poly = clip(&poly, &other.normal, other.offset);
                }
            }
            poly.dedup_by(|a, b| (*a - *b).norm() < 1e-9);
            if poly.len() > 1 && (poly[0] - poly[poly.len() - 1]).norm() < 1e-9 {
                poly.pop();
            }
            if poly.len() < 3 {
                poly.clear();
            }
            Plane {
                boundary: poly,
                ..plane.clone()
            }
        })
        .collect()
}
