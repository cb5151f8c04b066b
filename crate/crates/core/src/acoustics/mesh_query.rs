use crate::geometry::AnnotatedMesh;
use crate::Vec3;

const PARALLEL_EPS: f64 = 1e-14;
/// Barycentric margin below which a parity ray counts as grazing an edge.
const GRAZE_EPS: f64 = 1e-9;
const COPLANAR_COS: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Hit {
    pub t: f64,
    pub triangle: usize,
    /// Smallest barycentric coordinate; near zero means an edge hit.
    pub margin: f64,
}

/// Planar face: coplanar triangles grouped, with the outward plane.
#[derive(Debug, Clone)]
pub(crate) struct Face {
    pub normal: Vec3,
    pub offset: f64,
    pub triangles: Vec<usize>,
}

impl Face {
    pub fn mirror(&self, p: &Vec3) -> Vec3 {
        p - self.normal * (2.0 * (self.normal.dot(p) - self.offset))
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Triangle soup prepared for ray queries.
#[derive(Debug, Clone)]
pub struct MeshQuery {
    corners: Vec<[Vec3; 3]>,
    normals: Vec<Vec3>,
    pub(crate) faces: Vec<Face>,
    pub(crate) face_of: Vec<usize>,
    scale: f64,
}

impl MeshQuery {
    pub fn new(mesh: &AnnotatedMesh) -> Self {
        let corners: Vec<[Vec3; 3]> = (0..mesh.facet_count()).map(|f| mesh.corners(f)).collect();
        let normals: Vec<Vec3> = (0..mesh.facet_count()).map(|f| mesh.facet_normal(f)).collect();
        let scale = mesh.vertices.iter().fold(1.0f64, |m, v| m.max(v.amax()));
        let mut faces: Vec<Face> = Vec::new();
        let mut face_of = Vec::with_capacity(corners.len());
        for (f, (c, n)) in corners.iter().zip(&normals).enumerate() {
            let d = n.dot(&c[0]);
            let found = faces
                .iter()
                .position(|face| face.normal.dot(n) > COPLANAR_COS && (face.offset - d).abs() <= 1e-9 * scale);
            match found {
                Some(i) => {
                    faces[i].triangles.push(f);
                    face_of.push(i);
                }
                None => {
                    faces.push(Face {
                        normal: *n,
                        offset: d,
                        triangles: vec![f],
                    });
                    face_of.push(faces.len() - 1);
                }
            }
        }
        Self {
            corners,
            normals,
            faces,
            face_of,
            scale,
        }
    }

    pub fn triangle_count(&self) -> usize {
        self.corners.len()
    }

    pub(crate) fn normal(&self, triangle: usize) -> Vec3 {
        self.normals[triangle]
    }

    pub(crate) fn scale(&self) -> f64 {
        self.scale
    }

    /// Moller-Trumbore against one triangle; `t` in ray-direction units.
    pub(crate) fn intersect_triangle(&self, tri: usize, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let [a, b, c] = self.corners[tri];
        let e1 = b - a;
        let e2 = c - a;
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < PARALLEL_EPS * e1.norm() * e2.norm() * dir.norm() {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - a;
        let u = s.dot(&p) * inv;
        let q = s.cross(&e1);
        let v = dir.dot(&q) * inv;
        let w = 1.0 - u - v;
        let margin = u.min(v).min(w);
        if margin < -GRAZE_EPS {
            return None;
        }
        Some(Hit {
            t: e2.dot(&q) * inv,
            triangle: tri,
            margin,
        })
    }

    /// Nearest hit with `t > t_min`, skipping one triangle.
    pub(crate) fn first_hit(&self, origin: &Vec3, dir: &Vec3, t_min: f64, skip: Option<usize>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for tri in 0..self.corners.len() {
            if Some(tri) == skip {
                continue;
            }
            if let Some(h) = self.intersect_triangle(tri, origin, dir) {
                if h.t > t_min && best.is_none_or(|b| h.t < b.t) {
                    best = Some(h);
                }
            }
        }
        best
    }

    /// True when the open segment `a -> b` crosses no triangle outside
    /// `ignore` faces.
    pub(crate) fn segment_clear(&self, a: &Vec3, b: &Vec3, ignore: &[usize]) -> bool {
        let dir = b - a;
        let eps = 1e-9;
        (0..self.corners.len()).all(|tri| {
            if ignore.contains(&self.face_of[tri]) {
                return true;
            }
            match self.intersect_triangle(tri, a, &dir) {
                Some(h) => !(h.t > eps && h.t < 1.0 - eps),
                None => true,
            }
        })
    }

    /// Ray-parity inside test. Rays grazing an edge or vertex are retried in
    /// another direction.
    pub fn contains(&self, p: &Vec3) -> bool {
        const DIRECTIONS: [[f64; 3]; 5] = [
            [0.5773502691896258, 0.5773502691896257, 0.5773502691896259],
            [0.2672612419124244, -0.5345224838248488, 0.8017837257372732],
            [-0.7071067811865476, 0.1, 0.7],
            [0.3, 0.9, -0.3162277660168379],
            [-0.123, -0.456, -0.881],
        ];
        for d in DIRECTIONS {
            let dir = Vec3::new(d[0], d[1], d[2]);
            let mut crossings = 0usize;
            let mut ambiguous = false;
            for tri in 0..self.corners.len() {
                if let Some(h) = self.intersect_triangle(tri, p, &dir) {
                    if h.t.abs() <= 1e-12 * self.scale {
                        // on the surface: not strictly inside
                        return false;
                    }
                    if h.t > 0.0 {
                        if h.margin < GRAZE_EPS {
                            ambiguous = true;
                            break;
                        }
                        crossings += 1;
                    }
                }
            }
            if !ambiguous {
                return crossings % 2 == 1;
            }
        }
        false
    }
}

pub fn point_in_mesh(mesh: &AnnotatedMesh, p: &Vec3) -> bool {
    MeshQuery::new(mesh).contains(p)
}
