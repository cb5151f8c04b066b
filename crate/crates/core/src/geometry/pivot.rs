use std::collections::{HashMap, VecDeque};

use super::{AnnotatedMesh, FacetSource, GeometryError, PointCloud};
use crate::spatial::KdTree;
use crate::Vec3;

const EMPTY_BALL_EPS: f64 = 1e-9;

struct Pivoter<'a> {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    tree: KdTree,
    cloud: &'a PointCloud,
    triangles: Vec<[usize; 3]>,
    /// Directed edge -> third vertex of its triangle.
    directed: HashMap<(usize, usize), usize>,
    used: Vec<bool>,
}

/// Center of the radius-`r` ball touching `a, b, c` on the side of the
/// right-hand normal of `(a, b, c)`, or `None` when the circumradius exceeds `r`.
fn ball_center(a: Vec3, b: Vec3, c: Vec3, r: f64) -> Option<Vec3> {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let n2 = n.norm_squared();
    if n2 < 1e-24 {
        return None;
    }
    let circum = a + (ac.norm_squared() * n.cross(&ab) + ab.norm_squared() * ac.cross(&n)) / (2.0 * n2);
    let h2 = r * r - (circum - a).norm_squared();
    if h2 < 0.0 {
        return None;
    }
    Some(circum + n / n2.sqrt() * h2.sqrt())
}

impl<'a> Pivoter<'a> {
    fn edge_free(&self, a: usize, b: usize) -> bool {
        // a directed edge may exist once; its undirected edge at most twice
        !self.directed.contains_key(&(a, b))
    }

    fn ball_is_empty(&self, center: &Vec3, r: f64, tri: [usize; 3]) -> bool {
        self.tree
            .within_radius(center, r - EMPTY_BALL_EPS * (1.0 + r))
            .iter()
            .all(|(i, _)| tri.contains(i))
    }

    fn orientation_agrees(&self, tri: [usize; 3]) -> bool {
        let [a, b, c] = tri.map(|i| self.points[i]);
        let n = (b - a).cross(&(c - a));
        let avg: Vec3 = tri.iter().map(|&i| self.normals[i]).sum();
        n.dot(&avg) > 0.0
    }

    fn add(&mut self, tri: [usize; 3], front: &mut VecDeque<(usize, usize)>) {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            self.directed.insert((a, b), tri[(k + 2) % 3]);
            if !self.directed.contains_key(&(b, a)) {
                front.push_back((a, b));
            }
            self.used[tri[k]] = true;
        }
        self.triangles.push(tri);
    }

    fn find_seed(&self, i: usize, r: f64) -> Option<[usize; 3]> {
        let near: Vec<usize> = self
            .tree
            .within_radius(&self.points[i], 2.0 * r)
            .into_iter()
            .map(|x| x.0)
            .filter(|&j| j != i && !self.used[j])
            .collect();
        for (x, &j) in near.iter().enumerate() {
            for &k in &near[x + 1..] {
                for tri in [[i, j, k], [i, k, j]] {
                    if !self.orientation_agrees(tri) {
                        continue;
                    }
                    let [a, b, c] = tri.map(|t| self.points[t]);
                    if let Some(center) = ball_center(a, b, c, r) {
                        if self.ball_is_empty(&center, r, tri) {
                            return Some(tri);
                        }
                    }
                }
            }
        }
        None
    }

    /// Rolls the ball over edge `a -> b` away from its triangle and returns
    /// the first point it hits.
    fn pivot(&self, a: usize, b: usize, r: f64) -> Option<usize> {
        let o = *self.directed.get(&(a, b))?;
        let (pa, pb) = (self.points[a], self.points[b]);
        let center = ball_center(pa, pb, self.points[o], r)?;
        let m = (pa + pb) * 0.5;
        let e = (pb - pa).normalize();
        let v0 = center - m;
        let mut best: Option<(f64, usize)> = None;
        for (k, _) in self.tree.within_radius(&m, 2.0 * r) {
            if k == a || k == b || k == o {
                continue;
            }
            let tri = [b, a, k];
            if !self.orientation_agrees(tri) {
                continue;
            }
            let Some(ck) = ball_center(pb, pa, self.points[k], r) else {
                continue;
            };
            let vk = ck - m;
            let mut angle = v0.cross(&vk).dot(&e).atan2(v0.dot(&vk));
            if angle < 0.0 {
                angle = if angle > -1e-12 { 0.0 } else { angle + std::f64::consts::TAU };
            }
            if best.is_none_or(|(ba, bk)| angle < ba || (angle == ba && k < bk)) {
                best = Some((angle, k));
            }
        }
        let (_, k) = best?;
        let ck = ball_center(pb, pa, self.points[k], r)?;
        self.ball_is_empty(&ck, r, [a, b, k]).then_some(k)
    }

    fn try_attach(&mut self, a: usize, b: usize, r: f64, front: &mut VecDeque<(usize, usize)>) {
        if self.directed.contains_key(&(b, a)) {
            return;
        }
        let Some(k) = self.pivot(a, b, r) else {
            return;
        };
        let tri = [b, a, k];
        if !(self.edge_free(b, a) && self.edge_free(a, k) && self.edge_free(k, b)) {
            return;
        }
        if self.used[k] && !self.directed.contains_key(&(k, a)) && !self.directed.contains_key(&(b, k)) {
            // k is used but shares no front edge with this triangle: only
            // accept it if it still lies on the front
            let on_front = self
                .directed
                .keys()
                .any(|&(x, y)| (x == k || y == k) && !self.directed.contains_key(&(y, x)));
            if !on_front {
                return;
            }
        }
        self.add(tri, front);
    }
}

/// Ball-pivoting surface reconstruction over ascending radii. Output
/// vertices are the used input points in input order; every edge borders at
/// most two triangles.
pub fn ball_pivot(cloud: &PointCloud, radii: &[f64]) -> Result<AnnotatedMesh, GeometryError> {
    if cloud.points.iter().any(|p| p.normal.is_none()) {
        return Err(GeometryError::NoNormals);
    }
    if radii.windows(2).any(|w| !(w[0] < w[1])) || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(GeometryError::InvalidParameter("radii must be positive and ascending".into()));
    }
    let points = cloud.positions();
    let mut pv = Pivoter {
        normals: cloud.points.iter().map(|p| p.normal.expect("checked")).collect(),
        tree: KdTree::new(points.clone()),
        points,
        cloud,
        triangles: Vec::new(),
        directed: HashMap::new(),
        used: vec![false; cloud.len()],
    };
    for &r in radii {
        let mut front: VecDeque<(usize, usize)> = {
            let mut edges: Vec<(usize, usize)> = pv
                .directed
                .keys()
                .copied()
                .filter(|&(a, b)| !pv.directed.contains_key(&(b, a)))
                .collect();
            edges.sort_unstable();
            edges.into()
        };
        let mut next_seed = 0;
        loop {
            while let Some((a, b)) = front.pop_front() {
                pv.try_attach(a, b, r, &mut front);
            }
            let mut seeded = false;
            while next_seed < pv.points.len() {
                let i = next_seed;
                next_seed += 1;
                if pv.used[i] {
                    continue;
                }
                if let Some(tri) = pv.find_seed(i, r) {
                    pv.add(tri, &mut front);
                    seeded = true;
                    break;
                }
            }
            if !seeded {
                break;
            }
        }
    }

    let mut remap = vec![usize::MAX; pv.points.len()];
    let mut mesh = AnnotatedMesh::default();
    for (i, used) in pv.used.iter().enumerate() {
        if *used {
            remap[i] = mesh.push_vertex(pv.points[i], pv.cloud.points[i].identity);
        }
    }
    for t in &pv.triangles {
        mesh.push_facet(t.map(|i| remap[i]), FacetSource::Surface, None);
    }
    Ok(mesh)
}
