use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Isometry3, UnitQuaternion};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomtrace_core::fixtures::{annotated_box_mesh, box_mesh, box_room};
use roomtrace_core::geom2d::{orient, signed_area, Vec2};
use roomtrace_core::geometry::{
    ball_pivot, close_shell, estimate_normals, export_stl, fill_holes, filter_objects,
    fit_plane_least_squares, parse_sidecar, plane_boundary, ransac_plane, read_ply, read_stl,
    reassign_identities, remove_outliers, segment_planes, sidecar_json, substitute_object,
    triangulate_planes, validate_mesh, voxel_downsample, write_ply, write_stl, AnnotatedMesh,
    CloudPoint, FacetMaterial, FacetSource, GeometryError, Placement, Plane, PlaneId, PointCloud,
    Replacement,
};
use roomtrace_core::ingest::PointId;
use roomtrace_core::masking::MaskSet;
use roomtrace_core::materials::{AbsorptionSpectrum, MeasurementId};
use roomtrace_core::Vec3;

fn cloud_of(points: &[Vec3]) -> PointCloud {
    PointCloud::new(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| CloudPoint::new(Some(PointId(i as u64 + 1)), *p))
            .collect(),
    )
}

fn plain_material() -> FacetMaterial {
    FacetMaterial {
        measurement_id: MeasurementId(1),
        name: "Test plaster".into(),
        spectrum: AbsorptionSpectrum::uniform(0.2).unwrap(),
    }
}

fn plane(n: Vec3, d: f64) -> Plane {
    Plane {
        id: PlaneId(1),
        normal: n,
        offset: d,
        inliers: BTreeSet::new(),
        inlier_count: 0,
        boundary: Vec::new(),
    }
}

/// Newell normal of a closed loop.
fn loop_normal(lp: &[Vec3]) -> Vec3 {
    (0..lp.len()).map(|i| lp[i].cross(&lp[(i + 1) % lp.len()])).sum::<Vec3>() * 0.5
}

#[test]
fn far_point_is_removed_as_outlier() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pts: Vec<Vec3> = (0..50)
        .map(|_| Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
        .collect();
    pts.push(Vec3::new(100.0, 0.0, 0.0));
    let cloud = cloud_of(&pts);

    // brute-force statistic
    let stat: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = pts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| (p - q).norm()).collect();
            d.sort_by(f64::total_cmp);
            d[..5].iter().sum::<f64>() / 5.0
        })
        .collect();
    let mean = stat.iter().sum::<f64>() / stat.len() as f64;
    let sigma = (stat.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / stat.len() as f64).sqrt();
    let expected: Vec<PointId> = (0..pts.len())
        .filter(|&i| stat[i] > mean + sigma)
        .map(|i| PointId(i as u64 + 1))
        .collect();

    let (kept, removed) = remove_outliers(&cloud, 5, 1.0).unwrap();
    assert!(removed.contains(&PointId(51)));
    assert_eq!(removed, expected);
    assert_eq!(kept.len() + removed.len(), pts.len());

    let (again, removed_again) = remove_outliers(&kept, 5, 1.0).unwrap();
    assert!(removed_again.len() <= removed.len() || again.len() <= kept.len());

    let grid: Vec<Vec3> = (0..100).map(|i| Vec3::new((i % 10) as f64, (i / 10) as f64, 0.0)).collect();
    assert!(remove_outliers(&cloud_of(&grid), 4, 1e9).unwrap().1.is_empty());
    assert!(matches!(
        remove_outliers(&cloud_of(&grid[..3]), 5, 1.0),
        Err(GeometryError::TooFewPoints { .. })
    ));
}

#[test]
fn voxel_downsample_counts_and_trivial_cases() {
    let spacing = 0.1;
    let grid: Vec<Vec3> = (0..100)
        .map(|i| Vec3::new((i % 10) as f64 * spacing, (i / 10) as f64 * spacing, 0.0))
        .collect();
    let cloud = cloud_of(&grid);
    let voxel = 2.0 * spacing;
    let down = voxel_downsample(&cloud, voxel).unwrap();
    let min = grid.iter().fold(grid[0], |m, p| m.inf(p));
    let brute: BTreeSet<(i64, i64, i64)> = grid
        .iter()
        .map(|p| {
            let q = (p - min) / voxel;
            (q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64)
        })
        .collect();
    assert_eq!(down.len(), brute.len());
    assert_eq!(down.len(), 25);

    let one = voxel_downsample(&cloud, 10.0).unwrap();
    assert_eq!(one.len(), 1);
    let c = cloud.centroid().unwrap();
    assert!((one.points[0].position - c).norm() < 1e-12);

    let same = voxel_downsample(&cloud, 0.05).unwrap();
    let mut a: Vec<_> = same.points.iter().map(|p| p.identity).collect();
    let mut b: Vec<_> = cloud.points.iter().map(|p| p.identity).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    assert!(voxel_downsample(&cloud, 0.0).is_err());
}

#[test]
fn ransac_recovers_a_plane_among_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pts: Vec<Vec3> = (0..100)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
        .collect();
    for _ in 0..5 {
        pts.push(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..1.0)));
    }
    let seg = segment_planes(&cloud_of(&pts), 0.01, 200, 50, 1, 7).unwrap();
    assert_eq!(seg.planes.len(), 1);
    let p = &seg.planes[0];
    assert!((p.normal.z.abs() - 1.0).abs() < 1e-6 && p.normal.x.abs() < 1e-6 && p.normal.y.abs() < 1e-6);
    assert!(p.inlier_count >= 100);
    assert!((p.normal.norm() - 1.0).abs() < 1e-9);
    assert!(p.boundary.iter().all(|v| p.signed_distance(v).abs() <= 0.01));
    assert!(segment_planes(&PointCloud::default(), 0.01, 10, 3, 1, 0).is_err());
}

#[test]
fn two_walls_are_separated_with_their_members() {
    let mut pts = Vec::new();
    let mut wall = Vec::new();
    for i in 0..15 {
        for j in 0..10 {
            pts.push(Vec3::new(0.0, i as f64 * 0.2, j as f64 * 0.2));
            wall.push('x');
        }
    }
    for i in 1..15 {
        for j in 0..10 {
            pts.push(Vec3::new(i as f64 * 0.2, 0.0, j as f64 * 0.2 + 0.1));
            wall.push('y');
        }
    }
    let seg = segment_planes(&cloud_of(&pts), 0.01, 300, 20, 4, 5).unwrap();
    assert_eq!(seg.planes.len(), 2);
    for (plane, members) in seg.planes.iter().zip(&seg.plane_points) {
        let kind = if plane.normal.x.abs() > 0.99 { 'x' } else { 'y' };
        assert!(members.iter().all(|&i| wall[i] == kind));
        assert_eq!(members.len(), wall.iter().filter(|w| **w == kind).count());
        // normals face the cloud centroid
        let c = cloud_of(&pts).centroid().unwrap();
        assert!(plane.signed_distance(&c) > 0.0);
    }
    assert!(seg.residual.is_empty());
}

#[test]
fn ransac_is_deterministic_across_worker_counts() {
    let room = box_room(Vec3::new(4.0, 3.0, 2.5), 0.4, 0.005, 2);
    let cloud = PointCloud::from_database(&room.db);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| segment_planes(&cloud, 0.02, 300, 30, 6, 99).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.planes, b.planes);
    assert_eq!(a.plane_points, b.plane_points);
}

#[test]
fn least_squares_refit_never_increases_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..20 {
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-0.01..0.01)))
            .collect();
        let fit = ransac_plane(&pts, 0.02, 50, trial, 0).unwrap();
        let rms = |n: &Vec3, d: f64| {
            (fit.hypothesis_inliers.iter().map(|&i| (n.dot(&pts[i]) - d).powi(2)).sum::<f64>()
                / fit.hypothesis_inliers.len() as f64)
                .sqrt()
        };
        let subset: Vec<Vec3> = fit.hypothesis_inliers.iter().map(|&i| pts[i]).collect();
        let (n, d) = fit_plane_least_squares(&subset).unwrap();
        assert!(rms(&n, d) <= rms(&fit.hypothesis.0, fit.hypothesis.1) + 1e-15);
    }
}

/// Jarvis march over distinct points, counter-clockwise, collinear points skipped.
fn gift_wrap(points: &[Vec2]) -> Vec<Vec2> {
    let start = (0..points.len())
        .min_by(|&a, &b| points[a].x.total_cmp(&points[b].x).then(points[a].y.total_cmp(&points[b].y)))
        .unwrap();
    let mut hull = vec![start];
    loop {
        let cur = *hull.last().unwrap();
        let mut cand = (cur + 1) % points.len();
        for i in 0..points.len() {
            if i == cur {
                continue;
            }
            let o = orient(points[cur], points[cand], points[i]);
            let farther = (points[i] - points[cur]).norm() > (points[cand] - points[cur]).norm();
            if o < 0.0 || (o == 0.0 && farther) {
                cand = i;
            }
        }
        if cand == start {
            break;
        }
        hull.push(cand);
    }
    hull.into_iter().map(|i| points[i]).collect()
}

#[test]
fn boundary_of_unit_square_has_area_one() {
    let mut inliers = vec![
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(1.0, 1.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
    ];
    inliers.push(Vec3::new(0.5, 0.5, 0.0));
    let b = plane_boundary(&plane(Vec3::z(), 0.0), &inliers).unwrap();
    assert_eq!(b.len(), 4);
    let n = loop_normal(&b);
    assert!((n.norm() - 1.0).abs() < 1e-12);
    // right-hand normal opposes the plane normal
    assert!(n.z < 0.0);

    let collinear = [Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
    assert!(matches!(plane_boundary(&plane(Vec3::z(), 0.0), &collinear), Err(GeometryError::Collinear)));
}

#[test]
fn boundary_matches_gift_wrapping_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let flat: Vec<Vec2> = (0..50).map(|_| Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0))).collect();
        let inliers: Vec<Vec3> = flat.iter().map(|p| Vec3::new(p.x, p.y, 1.5)).collect();
        let b = plane_boundary(&plane(Vec3::z(), 1.5), &inliers).unwrap();
        let hull = gift_wrap(&flat);
        assert_eq!(b.len(), hull.len());
        for h in &hull {
            assert!(b.iter().any(|v| (v.x - h.x).abs() < 1e-9 && (v.y - h.y).abs() < 1e-9 && (v.z - 1.5).abs() < 1e-9));
        }
        let flat_loop: Vec<Vec2> = b.iter().map(|v| Vec2::new(v.x, v.y)).collect();
        let area = -signed_area(&flat_loop);
        for _ in 0..50 {
            let (i, j, k) = (rng.random_range(0..50), rng.random_range(0..50), rng.random_range(0..50));
            let tri = orient(flat[i], flat[j], flat[k]).abs() / 2.0;
            assert!(area + 1e-9 >= tri);
        }
    }
}

#[test]
fn fan_triangulation_counts() {
    for n in 3..9 {
        let boundary: Vec<Vec3> = (0..n)
            .map(|i| {
                let a = -(i as f64) * std::f64::consts::TAU / n as f64;
                Vec3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        let p = Plane {
            boundary,
            ..plane(Vec3::z(), 0.0)
        };
        let mesh = triangulate_planes(&[p]).unwrap();
        assert_eq!(mesh.facet_count(), n - 2);
        assert!(mesh.facet_source.iter().all(|s| *s == FacetSource::Plane(PlaneId(1))));
    }
    let degenerate = Plane {
        boundary: vec![Vec3::zeros(), Vec3::zeros(), Vec3::x()],
        ..plane(Vec3::z(), 0.0)
    };
    assert!(matches!(triangulate_planes(&[degenerate]), Err(GeometryError::DegenerateLoop(_))));
}

fn box_planes(dims: Vec3) -> Vec<Plane> {
    let axes = [
        (Vec3::x(), 0.0),
        (-Vec3::x(), -dims.x),
        (Vec3::y(), 0.0),
        (-Vec3::y(), -dims.y),
        (Vec3::z(), 0.0),
        (-Vec3::z(), -dims.z),
    ];
    let rough: Vec<Plane> = axes
        .iter()
        .enumerate()
        .map(|(i, (n, d))| Plane {
            id: PlaneId(i as u32 + 1),
            boundary: vec![Vec3::zeros(), dims],
            ..plane(*n, *d)
        })
        .collect();
    close_shell(&rough)
}

#[test]
fn box_of_six_planes_triangulates_to_a_closed_shell() {
    let dims = Vec3::new(5.0, 4.0, 3.0);
    let planes = box_planes(dims);
    assert!(planes.iter().all(|p| p.boundary.len() == 4));
    let mesh = triangulate_planes(&planes).unwrap();
    assert_eq!(mesh.facet_count(), 12);
    assert_eq!(mesh.vertices.len(), 8);
    let report = validate_mesh(&mesh);
    assert!(report.watertight && report.consistently_oriented);
    assert!((report.signed_volume - 60.0).abs() < 1e-9);
}

#[test]
fn cube_validation_and_hole_filling() {
    let cube = annotated_box_mesh(Vec3::new(1.0, 1.0, 1.0), plain_material());
    let report = validate_mesh(&cube);
    assert!(report.is_valid());
    assert!((report.signed_volume - 1.0).abs() < 1e-9);
    assert!(report.boundary_loops.is_empty() && report.unannotated_facets.is_empty());

    let mut holed = cube.clone();
    holed.triangles.remove(5);
    holed.facet_material.remove(5);
    holed.facet_source.remove(5);
    let report = validate_mesh(&holed);
    assert!(!report.watertight);
    assert_eq!(report.boundary_loops.len(), 1);
    assert_eq!(report.boundary_loops[0].len(), 3);

    let (same, fill) = fill_holes(&holed, 0);
    assert_eq!(same, holed);
    assert_eq!(fill.remaining.len(), 1);

    let (filled, fill) = fill_holes(&holed, 4);
    assert_eq!(fill.filled.len(), 1);
    let report = validate_mesh(&filled);
    assert!(report.is_valid());
    assert!((report.signed_volume - 1.0).abs() < 1e-9);
    // fill facets inherit the neighbouring material
    assert!(report.unannotated_facets.is_empty());

    let mut inverted = cube.clone();
    for t in &mut inverted.triangles {
        t.swap(1, 2);
    }
    let report = validate_mesh(&inverted);
    assert!((report.signed_volume + 1.0).abs() < 1e-9);
    assert!(!report.volume_adequate && !report.is_valid());

    let mut crumpled = cube.clone();
    crumpled.vertices[7] = crumpled.vertices[5];
    assert!(!validate_mesh(&crumpled).degenerate_facets.is_empty());

    let mut broken = cube;
    broken.triangles[0][0] = 99;
    assert!(!validate_mesh(&broken).indices_valid);
}

#[test]
fn stl_export_roundtrip_and_sidecar() {
    let cube = annotated_box_mesh(Vec3::new(1.0, 1.0, 1.0), plain_material());
    let bytes = write_stl(&cube);
    assert_eq!(bytes.len(), 684);
    assert_eq!(u32::from_le_bytes(bytes[80..84].try_into().unwrap()), 12);
    for f in 0..12 {
        assert_eq!(&bytes[84 + 50 * f + 48..84 + 50 * f + 50], &[0, 0]);
    }
    let back = read_stl(&bytes).unwrap();
    assert_eq!(back.facet_count(), 12);
    for f in 0..12 {
        for (a, b) in cube.corners(f).iter().zip(back.corners(f)) {
            assert!((a - b).norm() <= 1e-6);
        }
    }
    let (r0, r1) = (validate_mesh(&cube), validate_mesh(&back));
    assert_eq!(
        (r0.watertight, r0.consistently_oriented, r0.volume_adequate, r0.degenerate_facets.is_empty()),
        (r1.watertight, r1.consistently_oriented, r1.volume_adequate, r1.degenerate_facets.is_empty())
    );

    let dir = tempfile::tempdir().unwrap();
    let (stl, side) = (dir.path().join("room.stl"), dir.path().join("room.json"));
    let report = export_stl(&cube, &stl, &side, false).unwrap();
    assert!(report.warnings.is_empty());
    assert_eq!(std::fs::metadata(&stl).unwrap().len(), 684);
    let sidecar = parse_sidecar(&std::fs::read_to_string(&side).unwrap()).unwrap();
    assert_eq!(sidecar.facets.len(), read_stl(&std::fs::read(&stl).unwrap()).unwrap().facet_count());
    assert!(sidecar.facets.iter().enumerate().all(|(i, f)| f.index == i));
    assert_eq!(sidecar.facets[0].material.as_deref(), Some("Test plaster"));
    assert_eq!(sidecar.facets[0].alphas.get(&1000), Some(&0.2));
    assert_eq!(sidecar.facets[0].source, "surface");
    assert_eq!(parse_sidecar(&sidecar_json(&cube)).unwrap(), sidecar);
}

#[test]
fn export_refuses_invalid_meshes_without_override() {
    let dir = tempfile::tempdir().unwrap();
    let (stl, side) = (dir.path().join("a.stl"), dir.path().join("a.json"));
    let bare = box_mesh(Vec3::new(1.0, 1.0, 1.0));
    assert!(matches!(export_stl(&bare, &stl, &side, false), Err(GeometryError::Unannotated(v)) if v.len() == 12));
    let mut holed = annotated_box_mesh(Vec3::new(1.0, 1.0, 1.0), plain_material());
    holed.triangles.pop();
    holed.facet_material.pop();
    holed.facet_source.pop();
    assert!(matches!(export_stl(&holed, &stl, &side, false), Err(GeometryError::NotWatertight)));
    let report = export_stl(&holed, &stl, &side, true).unwrap();
    assert_eq!(report.warnings.len(), 1);
    assert_eq!(std::fs::metadata(&stl).unwrap().len(), 84 + 11 * 50);
    assert!(read_stl(&[0u8; 90]).is_err());
}

#[test]
fn ply_roundtrip_preserves_points() {
    let mut cloud = cloud_of(&[Vec3::new(1.0, 2.0, 3.0), Vec3::new(-0.5, 0.25, 1e-3)]);
    cloud.points[0].normal = Some(Vec3::z());
    cloud.points[1].identity = None;
    cloud.points[1].color = [1, 2, 250];
    let text = write_ply(&cloud);
    assert!(text.contains("property int64 identity"));
    assert_eq!(read_ply(&text).unwrap(), cloud);
    assert!(read_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
}

fn grid_with_normals(n: usize, spacing: f64) -> PointCloud {
    let mut cloud = cloud_of(
        &(0..n * n)
            .map(|i| Vec3::new((i % n) as f64 * spacing, (i / n) as f64 * spacing, 0.0))
            .collect::<Vec<_>>(),
    );
    for p in &mut cloud.points {
        p.normal = Some(Vec3::z());
    }
    cloud
}

fn components(mesh: &AnnotatedMesh) -> usize {
    let mut parent: Vec<usize> = (0..mesh.vertices.len()).collect();
    fn find(p: &mut Vec<usize>, i: usize) -> usize {
        if p[i] != i {
            let r = find(p, p[i]);
            p[i] = r;
        }
        p[i]
    }
    for t in &mesh.triangles {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
            parent[a] = b;
        }
    }
    (0..mesh.vertices.len()).filter(|&i| find(&mut parent, i) == i).count()
}

fn max_edge_use(mesh: &AnnotatedMesh) -> usize {
    let mut uses: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *uses.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    uses.values().copied().max().unwrap_or(0)
}

#[test]
fn ball_pivoting_meshes_a_grid_patch() {
    let spacing = 0.1;
    let cloud = grid_with_normals(10, spacing);
    let mesh = ball_pivot(&cloud, &[1.5 * spacing]).unwrap();
    assert!(mesh.facet_count() > 0);
    assert_eq!(components(&mesh), 1);
    let input: BTreeSet<_> = cloud.points.iter().map(|p| p.identity).collect();
    assert!(mesh.vertex_identity.iter().all(|id| input.contains(id)));
    for (v, id) in mesh.vertices.iter().zip(&mesh.vertex_identity) {
        let src = cloud.points.iter().find(|p| p.identity == *id).unwrap();
        assert_eq!(*v, src.position);
    }
    assert!(max_edge_use(&mesh) <= 2);
    // facets face along the point normals
    assert!((0..mesh.facet_count()).all(|f| mesh.facet_normal(f).z > 0.0));
    let area: f64 = (0..mesh.facet_count()).map(|f| mesh.facet_area(f)).sum();
    assert!(area <= 0.81 + 1e-9);
}

#[test]
fn ball_pivoting_trivial_cases() {
    let mut three = cloud_of(&[Vec3::zeros(), Vec3::x(), Vec3::y()]);
    for p in &mut three.points {
        p.normal = Some(Vec3::z());
    }
    let mesh = ball_pivot(&three, &[10.0]).unwrap();
    assert_eq!(mesh.facet_count(), 1);
    assert!(mesh.facet_normal(0).z > 0.0);
    assert_eq!(ball_pivot(&three, &[]).unwrap().facet_count(), 0);
    assert_eq!(ball_pivot(&three, &[0.1]).unwrap().facet_count(), 0);
    assert!(ball_pivot(&three, &[2.0, 1.0]).is_err());
    let bare = cloud_of(&[Vec3::zeros(), Vec3::x(), Vec3::y()]);
    assert!(matches!(ball_pivot(&bare, &[1.0]), Err(GeometryError::NoNormals)));
}

#[test]
fn normal_estimation_on_a_box_points_inward() {
    let room = box_room(Vec3::new(3.0, 2.0, 2.0), 0.25, 0.0, 4);
    let cloud = PointCloud::from_database(&room.db);
    let with = estimate_normals(&cloud, 16).unwrap();
    let c = with.centroid().unwrap();
    let mut inward = 0;
    for p in &with.points {
        let n = p.normal.unwrap();
        assert!((n.norm() - 1.0).abs() < 1e-9);
        if n.dot(&(c - p.position)) > 0.0 {
            inward += 1;
        }
    }
    assert!(inward as f64 > 0.8 * with.len() as f64);
}

fn anisotropic_blob(seed: u64, n: usize) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)))
        .collect()
}

#[test]
fn substitution_by_self_and_auto_placement() {
    let base = cloud_of(&anisotropic_blob(5, 300));
    let targets: BTreeSet<PointId> = (1..=120).map(PointId).collect();
    let removed: Vec<CloudPoint> = base.points.iter().filter(|p| targets.contains(&p.identity.unwrap())).cloned().collect();

    let same = substitute_object(
        &base,
        &targets,
        Replacement::Cloud(PointCloud::new(removed.clone())),
        Placement::Rigid(Isometry3::identity()),
    )
    .unwrap();
    assert_eq!(same.removed, 120);
    let key = |c: &PointCloud| {
        let mut v: Vec<_> = c.points.iter().map(|p| (p.identity, [p.position.x.to_bits(), p.position.y.to_bits(), p.position.z.to_bits()])).collect();
        v.sort();
        v
    };
    assert_eq!(key(&same.cloud), key(&base));

    let shift = Vec3::new(3.0, -1.5, 0.75);
    let moved: Vec<CloudPoint> = removed
        .iter()
        .map(|p| CloudPoint {
            position: p.position + shift,
            ..p.clone()
        })
        .collect();
    let auto = substitute_object(&base, &targets, Replacement::Cloud(PointCloud::new(moved)), Placement::Auto).unwrap();
    assert!((auto.transform.translation.vector + shift).norm() < 1e-6);
    assert!(auto.transform.rotation.angle() < 1e-6);

    // a rotated copy lands on the target's centroid and principal axes;
    // axis signs follow the +z convention, so only second moments must agree
    let rot = UnitQuaternion::from_euler_angles(0.1, -0.2, 0.4);
    let turned: Vec<CloudPoint> = removed
        .iter()
        .map(|p| CloudPoint {
            position: rot * p.position + shift,
            ..p.clone()
        })
        .collect();
    let auto = substitute_object(&base, &targets, Replacement::Cloud(PointCloud::new(turned)), Placement::Auto).unwrap();
    let placed: Vec<Vec3> = auto.cloud.points[auto.cloud.len() - 120..].iter().map(|p| p.position).collect();
    let original: Vec<Vec3> = removed.iter().map(|p| p.position).collect();
    let moments = |pts: &[Vec3]| {
        let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
        let cov = pts.iter().map(|p| (p - c) * (p - c).transpose()).sum::<nalgebra::Matrix3<f64>>() / pts.len() as f64;
        (c, cov)
    };
    let ((c0, m0), (c1, m1)) = (moments(&original), moments(&placed));
    assert!((c0 - c1).norm() < 1e-9);
    assert!((m0 - m1).norm() < 1e-9);

    assert!(matches!(
        substitute_object(&base, &BTreeSet::new(), Replacement::Cloud(PointCloud::default()), Placement::Auto),
        Err(GeometryError::EmptyTarget)
    ));
    let sphere: Vec<CloudPoint> = (0..6)
        .map(|i| {
            let mut v = Vec3::zeros();
            v[i / 2] = if i % 2 == 0 { 1.0 } else { -1.0 };
            CloudPoint::new(None, v)
        })
        .collect();
    assert!(matches!(
        substitute_object(&base, &targets, Replacement::Cloud(PointCloud::new(sphere)), Placement::Auto),
        Err(GeometryError::DegenerateAxes)
    ));
    let mesh = annotated_box_mesh(Vec3::new(1.0, 1.0, 1.0), plain_material());
    let with_mesh =
        substitute_object(&base, &targets, Replacement::Mesh(mesh), Placement::Rigid(Isometry3::identity())).unwrap();
    assert_eq!(with_mesh.cloud.len(), 300 - 120 + 8);
}

#[test]
fn filtering_by_label_matches_set_difference() {
    let room = box_room(Vec3::new(6.0, 5.0, 3.5), 0.5, 0.0, 1);
    let mut masks = MaskSet::default();
    masks.import(&room.db, &room.suggestions, 0.0).unwrap();
    let cloud = PointCloud::from_database(&room.db);
    let chair: BTreeSet<PointId> = masks
        .iter()
        .filter(|m| m.category_label == "chair")
        .flat_map(|m| m.identities().iter().copied())
        .collect();
    assert!(!chair.is_empty());
    let exclude: BTreeSet<String> = ["chair".to_string()].into();
    let filtered = filter_objects(&cloud, &masks, None, &exclude);
    let expected: BTreeSet<PointId> = cloud.identities().difference(&chair).copied().collect();
    assert_eq!(filtered.identities(), expected);

    let nothing: BTreeSet<String> = ["piano".to_string()].into();
    assert_eq!(filter_objects(&cloud, &masks, None, &nothing), cloud);
    let all: BTreeSet<String> = masks.iter().map(|m| m.category_label.clone()).collect();
    assert_eq!(filter_objects(&cloud, &masks, Some(&all), &BTreeSet::new()), cloud);
}

#[test]
fn reassignment_matches_linear_scan_and_is_translation_invariant() {
    let room = box_room(Vec3::new(6.0, 5.0, 3.5), 0.4, 0.0, 3);
    assert!(room.db.points().len() >= 500);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let vertices: Vec<Vec3> = (0..400)
        .map(|_| Vec3::new(rng.random_range(-0.5..6.5), rng.random_range(-0.5..5.5), rng.random_range(-0.5..4.0)))
        .collect();
    let got = reassign_identities(&vertices, &room.db).unwrap();
    for (v, id) in vertices.iter().zip(&got) {
        let best = room
            .db
            .points()
            .iter()
            .min_by(|a, b| (a.1.position - v).norm_squared().total_cmp(&(b.1.position - v).norm_squared()).then(a.0.cmp(b.0)))
            .unwrap();
        assert_eq!(id, best.0);
    }
    let (pid, p) = room.db.points().iter().nth(17).unwrap();
    assert_eq!(reassign_identities(&[p.position], &room.db).unwrap(), vec![*pid]);

    let shift = Vec3::new(10.0, -4.0, 2.0);
    let mut moved = room.db.clone();
    moved.translate(shift);
    let shifted: Vec<Vec3> = vertices.iter().map(|v| v + shift).collect();
    assert_eq!(reassign_identities(&shifted, &moved).unwrap(), got);
}

#[test]
fn remodeled_box_volume_is_close_to_ground_truth() {
    let dims = Vec3::new(5.0, 4.0, 3.0);
    let room = box_room(dims, 0.25, 0.005, 9);
    let cloud = PointCloud::from_database(&room.db);
    let (clean, _) = remove_outliers(&cloud, 8, 2.0).unwrap();
    let seg = segment_planes(&clean, 0.02, 400, 50, 6, 1).unwrap();
    assert_eq!(seg.planes.len(), 6);
    let mesh = triangulate_planes(&close_shell(&seg.planes)).unwrap();
    let report = validate_mesh(&mesh);
    assert!(report.watertight && report.consistently_oriented);
    let truth = dims.x * dims.y * dims.z;
    assert!((report.signed_volume - truth).abs() / truth < 0.05, "{}", report.signed_volume);
}

proptest! {
    #[test]
    fn ball_pivot_edges_stay_manifold(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = cloud_of(
            &(0..60)
                .map(|_| Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(-0.02..0.02)))
                .collect::<Vec<_>>(),
        );
        for p in &mut cloud.points {
            p.normal = Some(Vec3::z());
        }
        let mesh = ball_pivot(&cloud, &[0.15, 0.3]).unwrap();
        prop_assert!(max_edge_use(&mesh) <= 2);
        let mut directed = BTreeSet::new();
        for t in &mesh.triangles {
            for k in 0..3 {
                prop_assert!(directed.insert((t[k], t[(k + 1) % 3])));
            }
        }
    }

    #[test]
    fn segmentation_is_seed_deterministic(seed in 0u64..50) {
        let pts = anisotropic_blob(seed, 120);
        let cloud = cloud_of(&pts);
        let a = segment_planes(&cloud, 0.1, 40, 10, 3, seed).unwrap();
        let b = segment_planes(&cloud, 0.1, 40, 10, 3, seed).unwrap();
        prop_assert_eq!(a.planes, b.planes);
    }
}
