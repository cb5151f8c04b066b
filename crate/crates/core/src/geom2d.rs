//! Planar polygon helpers shared by photo masking and plane boundaries.

use nalgebra::Vector2;

pub type Vec2 = Vector2<f64>;

const EPS: f64 = 1e-12;

/// z-component of `(b - a) x (c - a)`.
pub fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Shoelace area, positive for counter-clockwise loops.
pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn on_segment(p: Vec2, a: Vec2, b: Vec2) -> bool {
    let scale = 1.0 + (b - a).norm();
    orient(a, b, p).abs() <= EPS * scale * scale
        && p.x >= a.x.min(b.x) - EPS
        && p.x <= a.x.max(b.x) + EPS
        && p.y >= a.y.min(b.y) - EPS
        && p.y <= a.y.max(b.y) + EPS
}

/// Even-odd point-in-polygon test; points on the boundary count as inside.
pub fn contains_point(poly: &[Vec2], p: Vec2) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = poly[i];
        let b = poly[j];
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from `p` to the polygon region (zero inside or on the boundary).
pub fn distance_to_polygon(poly: &[Vec2], p: Vec2) -> f64 {
    if contains_point(poly, p) {
        return 0.0;
    }
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_distance(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Whether closed segments `ab` and `cd` share at least one point.
pub fn segments_touch(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

/// Intersection of segments `ab` and `cd` as `(t, s)` parameters along each,
/// or `None` when they are parallel or do not meet.
pub fn segment_intersection(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> Option<(f64, f64)> {
    let r = b - a;
    let s = d - c;
    let denom = r.x * s.y - r.y * s.x;
    if denom.abs() < EPS {
        return None;
    }
    let qp = c - a;
    let t = (qp.x * s.y - qp.y * s.x) / denom;
    let u = (qp.x * r.y - qp.y * r.x) / denom;
    if (-EPS..=1.0 + EPS).contains(&t) && (-EPS..=1.0 + EPS).contains(&u) {
        Some((t.clamp(0.0, 1.0), u.clamp(0.0, 1.0)))
    } else {
        None
    }
}

/// A polygon is simple when no two non-adjacent edges touch and it has
/// non-zero area.
pub fn is_simple(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 || signed_area(poly).abs() <= EPS {
        return false;
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (b - a).norm() == 0.0 {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_touch(a, b, poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, collinear
/// points dropped. Returns fewer than three points for degenerate input.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a == b);
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Same as [`convex_hull`] but returns indices into `points`.
pub fn convex_hull_indices(points: &[Vec2]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .x
            .total_cmp(&points[b].x)
            .then(points[a].y.total_cmp(&points[b].y))
    });
    order.dedup_by(|a, b| points[*a] == points[*b]);
    if order.len() < 3 {
        return order;
    }
    let mut hull: Vec<usize> = Vec::with_capacity(2 * order.len());
    for &i in &order {
        while hull.len() >= 2
            && orient(
                points[hull[hull.len() - 2]],
                points[hull[hull.len() - 1]],
                points[i],
            ) <= 0.0
        {
            hull.pop();
        }
        hull.push(i);
    }
    let lower_len = hull.len() + 1;
    for &i in order.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && orient(
                points[hull[hull.len() - 2]],
                points[hull[hull.len() - 1]],
                points[i],
            ) <= 0.0
        {
            hull.pop();
        }
        hull.push(i);
    }
    hull.pop();
    hull
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    fn winding_number(poly: &[Vec2], p: Vec2) -> i32 {
        let n = poly.len();
        let mut wn = 0;
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            if a.y <= p.y {
                if b.y > p.y && orient(a, b, p) > 0.0 {
                    wn += 1;
                }
            } else if b.y <= p.y && orient(a, b, p) < 0.0 {
                wn -= 1;
            }
        }
        wn
    }

    #[test]
    fn unit_square_membership() {
        let sq = [v(0.0, 0.0), v(1.0, 0.0), v(1.0, 1.0), v(0.0, 1.0)];
        assert!(contains_point(&sq, v(0.5, 0.5)));
        assert!(contains_point(&sq, v(1.0, 0.5)));
        assert!(contains_point(&sq, v(0.0, 0.0)));
        assert!(!contains_point(&sq, v(1.5, 0.5)));
        assert_eq!(signed_area(&sq), 1.0);
    }

    #[test]
    fn bowtie_is_not_simple() {
        let bowtie = [v(0.0, 0.0), v(1.0, 1.0), v(1.0, 0.0), v(0.0, 1.0)];
        assert!(!is_simple(&bowtie));
        let sq = [v(0.0, 0.0), v(1.0, 0.0), v(1.0, 1.0), v(0.0, 1.0)];
        assert!(is_simple(&sq));
    }

    #[test]
    fn hull_drops_interior_and_collinear_points() {
        let pts = [
            v(0.0, 0.0),
            v(2.0, 0.0),
            v(1.0, 0.0),
            v(2.0, 2.0),
            v(0.0, 2.0),
            v(1.0, 1.0),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(signed_area(&hull) > 0.0);
        assert_eq!(convex_hull_indices(&pts).len(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn even_odd_matches_winding_on_convex_polygons(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..12),
            qx in -12.0f64..12.0,
            qy in -12.0f64..12.0,
        ) {
            let pts: Vec<Vec2> = pts.into_iter().map(|(x, y)| v(x, y)).collect();
            let hull = convex_hull(&pts);
            prop_assume!(hull.len() >= 3);
            let q = v(qx, qy);
            let on_boundary = (0..hull.len())
                .any(|i| point_segment_distance(q, hull[i], hull[(i + 1) % hull.len()]) < 1e-9);
            prop_assume!(!on_boundary);
            prop_assert_eq!(contains_point(&hull, q), winding_number(&hull, q) != 0);
        }
    }
}
