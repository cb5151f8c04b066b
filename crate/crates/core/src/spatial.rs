//! Spatial indexes: a uniform 2D bucket grid for pixel-space queries and a
//! static k-d tree over 3D positions.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::Vec3;

/// Uniform bucket grid over 2D points carrying a payload.
#[derive(Debug, Clone)]
pub struct PixelGrid<T> {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<(f64, f64, T)>>,
    len: usize,
}

impl<T> PixelGrid<T> {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        Self {
            cell,
            buckets: HashMap::new(),
            len: 0,
        }
    }

    fn key(&self, u: f64, v: f64) -> (i64, i64) {
        ((u / self.cell).floor() as i64, (v / self.cell).floor() as i64)
    }

    pub fn insert(&mut self, u: f64, v: f64, payload: T) {
        let key = self.key(u, v);
        self.buckets.entry(key).or_default().push((u, v, payload));
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Visit every entry within `radius` (inclusive) of `(u, v)` with its distance.
    pub fn for_each_within<F: FnMut(&T, f64)>(&self, u: f64, v: f64, radius: f64, mut f: F) {
        if !(radius >= 0.0) || !u.is_finite() || !v.is_finite() {
            return;
        }
        let (x0, y0) = self.key(u - radius, v - radius);
        let (x1, y1) = self.key(u + radius, v + radius);
        for gx in x0..=x1 {
            for gy in y0..=y1 {
                if let Some(bucket) = self.buckets.get(&(gx, gy)) {
                    for (pu, pv, payload) in bucket {
                        let d = ((pu - u).powi(2) + (pv - v).powi(2)).sqrt();
                        if d <= radius {
                            f(payload, d);
                        }
                    }
                }
            }
        }
    }

    /// Visit every entry inside the closed rectangle `[u0, u1] x [v0, v1]`.
    pub fn for_each_in_rect<F: FnMut(f64, f64, &T)>(&self, u0: f64, v0: f64, u1: f64, v1: f64, mut f: F) {
        if !(u0 <= u1 && v0 <= v1) {
            return;
        }
        let (x0, y0) = self.key(u0, v0);
        let (x1, y1) = self.key(u1, v1);
        let cells = (x1 - x0 + 1).saturating_mul(y1 - y0 + 1);
        if cells as usize > self.buckets.len() {
            // sparse grid relative to the rectangle: scan buckets instead
            for bucket in self.buckets.values() {
                for (pu, pv, payload) in bucket {
                    if *pu >= u0 && *pu <= u1 && *pv >= v0 && *pv <= v1 {
                        f(*pu, *pv, payload);
                    }
                }
            }
            return;
        }
        for gx in x0..=x1 {
            for gy in y0..=y1 {
                if let Some(bucket) = self.buckets.get(&(gx, gy)) {
                    for (pu, pv, payload) in bucket {
                        if *pu >= u0 && *pu <= u1 && *pv >= v0 && *pv <= v1 {
                            f(*pu, *pv, payload);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Static 3-d tree. Query results break distance ties by the lower point index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    // permutation of point indices; the node of range [lo, hi) sits at its midpoint
    order: Vec<usize>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> Vec3 {
        self.points[index]
    }

    /// Nearest point as `(index, distance)`.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        self.knn(query, 1).into_iter().next()
    }

    /// `k` nearest points sorted by `(distance, index)`.
    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(query, k, 0, self.order.len(), 0, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }

    fn knn_rec(
        &self,
        query: &Vec3,
        k: usize,
        lo: usize,
        hi: usize,
        depth: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let cand = Candidate {
            dist2: (p - query).norm_squared(),
            index: idx,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("heap holds k entries") {
            heap.pop();
            heap.push(cand);
        }
        let axis = depth % 3;
        let delta = query[axis] - p[axis];
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.knn_rec(query, k, near.0, near.1, depth + 1, heap);
        let worst = heap.peek().map(|c| c.dist2).unwrap_or(f64::INFINITY);
        if heap.len() < k || delta * delta <= worst {
            self.knn_rec(query, k, far.0, far.1, depth + 1, heap);
        }
    }

    /// All points within `radius` (inclusive), sorted by `(distance, index)`.
    pub fn within_radius(&self, query: &Vec3, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if radius >= 0.0 {
            self.radius_rec(query, radius * radius, 0, self.order.len(), 0, &mut out);
        }
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }

    fn radius_rec(
        &self,
        query: &Vec3,
        r2: f64,
        lo: usize,
        hi: usize,
        depth: usize,
        out: &mut Vec<Candidate>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d2 = (p - query).norm_squared();
        if d2 <= r2 {
            out.push(Candidate {
                dist2: d2,
                index: idx,
            });
        }
        let axis = depth % 3;
        let delta = query[axis] - p[axis];
        if delta <= 0.0 || delta * delta <= r2 {
            self.radius_rec(query, r2, lo, mid, depth + 1, out);
        }
        if delta >= 0.0 || delta * delta <= r2 {
            self.radius_rec(query, r2, mid + 1, hi, depth + 1, out);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect()
    }

    fn brute_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all.into_iter().map(|(i, d)| (i, d.sqrt())).collect()
    }

    #[test]
    fn knn_matches_linear_scan() {
        let pts = random_points(400, 3);
        let tree = KdTree::new(pts.clone());
        for q in random_points(100, 4) {
            for k in [1, 5, 17] {
                assert_eq!(tree.knn(&q, k), brute_knn(&pts, &q, k));
            }
        }
    }

    #[test]
    fn radius_query_matches_linear_scan() {
        let pts = random_points(300, 5);
        let tree = KdTree::new(pts.clone());
        for q in random_points(50, 6) {
            let got: Vec<usize> = tree.within_radius(&q, 2.0).into_iter().map(|x| x.0).collect();
            let want: Vec<usize> = brute_knn(&pts, &q, pts.len())
                .into_iter()
                .filter(|x| x.1 <= 2.0)
                .map(|x| x.0)
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn duplicate_points_tie_by_index() {
        let p = Vec3::new(1.0, 1.0, 1.0);
        let tree = KdTree::new(vec![p, p, Vec3::zeros(), p]);
        assert_eq!(tree.nearest(&p), Some((0, 0.0)));
    }

    #[test]
    fn grid_returns_entries_inside_radius() {
        let mut grid = PixelGrid::new(16.0);
        grid.insert(10.0, 10.0, 1u32);
        grid.insert(17.0, 10.0, 2u32);
        grid.insert(40.0, 40.0, 3u32);
        let mut hits = Vec::new();
        grid.for_each_within(15.0, 10.0, 5.0, |p, _| hits.push(*p));
        hits.sort();
        assert_eq!(hits, vec![1, 2]);
    }
}
