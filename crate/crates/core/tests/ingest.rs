use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomtrace_core::fixtures::three_camera_scene;
use roomtrace_core::ingest::{
    parse_sfm_text, write_sfm_text, ImageId, IngestError, PointId, Projection, ReprojectionDatabase,
};
use roomtrace_core::Vec3;

fn single_camera_db() -> ReprojectionDatabase {
    let cams = "1 PINHOLE 100 100 100 100 50 50\n";
    let imgs = "1 1 0 0 0 0 0 0 1 a.png\n50 50 1 100 50 2 20 20 -1\n";
    let pts = "1 0 0 2 0 0 0 0 1 0\n2 1 0 2 0 0 0 0 1 1\n";
    parse_sfm_text(cams, imgs, pts).unwrap()
}

#[test]
fn pinhole_projection_examples() {
    let db = single_camera_db();
    let img = ImageId(1);
    assert_eq!(
        db.project(img, &Vec3::new(0.0, 0.0, 2.0)).unwrap().pixel(),
        Some((50.0, 50.0))
    );
    assert_eq!(
        db.project(img, &Vec3::new(1.0, 0.0, 2.0)).unwrap().pixel(),
        Some((100.0, 50.0))
    );
    assert_eq!(
        db.project(img, &Vec3::new(0.0, 0.0, -1.0)).unwrap(),
        Projection::BehindCamera
    );
    assert!(matches!(
        db.project(ImageId(9), &Vec3::zeros()),
        Err(IngestError::UnknownImage(_))
    ));
}

#[test]
fn simple_radial_applies_distortion_factor() {
    let cams = "1 SIMPLE_RADIAL 200 200 100 100 100 0.1\n";
    let db = parse_sfm_text(cams, "1 1 0 0 0 0 0 0 1 a.png\n\n", "").unwrap();
    // normalized (0.5, 0): factor 1 + 0.1 * 0.25
    let (u, v) = db.project(ImageId(1), &Vec3::new(1.0, 0.0, 2.0)).unwrap().pixel().unwrap();
    assert!((u - (100.0 * 0.5 * 1.025 + 100.0)).abs() < 1e-12);
    assert_eq!(v, 100.0);
}

#[test]
fn lookup_exact_hit_and_empty_radius() {
    let db = single_camera_db();
    let hits = db.lookup_identities_near_pixel(ImageId(1), 50.0, 50.0, 0.5).unwrap();
    assert_eq!(hits.first(), Some(&PointId(1)));
    let none = db.lookup_identities_near_pixel(ImageId(1), 30.0, 70.0, 0.0).unwrap();
    assert!(none.is_empty());
    assert!(db.lookup_identities_near_pixel(ImageId(1), 0.0, 0.0, -1.0).is_err());
}

fn brute_lookup(db: &ReprojectionDatabase, image: ImageId, u: f64, v: f64, r: f64) -> Vec<PointId> {
    let photo = db.photo(image).unwrap();
    let mut best: std::collections::BTreeMap<PointId, f64> = Default::default();
    for obs in &photo.observations {
        if let Some(pid) = obs.identity {
            let d = ((obs.u - u).powi(2) + (obs.v - v).powi(2)).sqrt();
            if d <= r {
                let e = best.entry(pid).or_insert(d);
                *e = e.min(d);
            }
        }
    }
    for p in db.points().values() {
        if let Projection::Pixel { u: pu, v: pv, .. } = db.project(image, &p.position).unwrap() {
            let d = ((pu - u).powi(2) + (pv - v).powi(2)).sqrt();
            if d <= r {
                let e = best.entry(p.id).or_insert(d);
                *e = e.min(d);
            }
        }
    }
    let mut out: Vec<(PointId, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out.into_iter().map(|x| x.0).collect()
}

#[test]
fn lookup_matches_linear_scan_on_random_queries() {
    let db = three_camera_scene(11);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let images: Vec<ImageId> = db.photos().keys().copied().collect();
    for _ in 0..1000 {
        let img = images[rng.random_range(0..images.len())];
        let u = rng.random_range(-10.0..650.0);
        let v = rng.random_range(-10.0..490.0);
        let r = rng.random_range(0.0..25.0);
        assert_eq!(
            db.lookup_identities_near_pixel(img, u, v, r).unwrap(),
            brute_lookup(&db, img, u, v, r)
        );
    }
}

#[test]
fn fixture_tracks_are_consistent_and_round_trip() {
    let db = three_camera_scene(1);
    assert_eq!(db.photos().len(), 3);
    assert_eq!(db.points().len(), 200);
    for p in db.points().values() {
        for t in &p.track {
            let obs = db.photo(t.image).unwrap().observations[t.observation];
            assert_eq!(obs.identity, Some(p.id));
            let (u, v) = db.project(t.image, &p.position).unwrap().pixel().unwrap();
            let err = ((u - obs.u).powi(2) + (v - obs.v).powi(2)).sqrt();
            assert!(err <= p.reproj_error + 1e-3, "{err}");
        }
    }
    let text = write_sfm_text(&db);
    let again = parse_sfm_text(&text.cameras, &text.images, &text.points).unwrap();
    assert_eq!(again.points(), db.points());
}

#[test]
fn marker_scaling_ratio_and_projective_invariance() {
    let cams = "1 PINHOLE 100 100 100 100 50 50\n";
    let imgs = "1 1 0 0 0 0 0 1 1 a.png\n50 50 1 75 50 2\n";
    let pts = "1 0 0 1 0 0 0 0 1 0\n2 0.5 0 1 0 0 0 0 1 1\n";
    let mut db = parse_sfm_text(cams, imgs, pts).unwrap();
    let s = db.scale_by_marker(PointId(1), PointId(2), 2.0).unwrap();
    assert_eq!(s, 4.0);
    assert_eq!(db.scale_factor(), 4.0);
    assert_eq!(db.point(PointId(2)).unwrap().position, Vec3::new(2.0, 0.0, 4.0));

    let mut fixture = three_camera_scene(5);
    let before: Vec<(f64, f64)> = fixture
        .points()
        .values()
        .flat_map(|p| {
            let f = &fixture;
            p.track
                .iter()
                .map(move |t| f.project(t.image, &p.position).unwrap().pixel().unwrap())
        })
        .collect();
    let ids: Vec<PointId> = fixture.points().keys().copied().take(2).collect();
    fixture.scale_by_marker(ids[0], ids[1], 3.7).unwrap();
    let after: Vec<(f64, f64)> = fixture
        .points()
        .values()
        .flat_map(|p| {
            let f = &fixture;
            p.track
                .iter()
                .map(move |t| f.project(t.image, &p.position).unwrap().pixel().unwrap())
        })
        .collect();
    for (a, b) in before.iter().zip(&after) {
        assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
    }
}

#[test]
fn unit_scale_is_bitwise_identity_and_inverse_restores() {
    let original = three_camera_scene(8);
    let ids: Vec<PointId> = original.points().keys().copied().take(2).collect();
    let d = (original.point(ids[0]).unwrap().position - original.point(ids[1]).unwrap().position).norm();

    let mut same = original.clone();
    same.scale_by_marker(ids[0], ids[1], d).unwrap();
    assert_eq!(same.points(), original.points());
    assert_eq!(same.photos(), original.photos());

    let mut db = original.clone();
    let s = db.scale_by_marker(ids[0], ids[1], 2.5 * d).unwrap();
    let current = (db.point(ids[0]).unwrap().position - db.point(ids[1]).unwrap().position).norm();
    db.scale_by_marker(ids[0], ids[1], current / s).unwrap();
    for (a, b) in db.points().values().zip(original.points().values()) {
        let rel = (a.position - b.position).norm() / b.position.norm();
        assert!(rel < 1e-9, "{rel}");
    }
}

#[test]
fn coincident_markers_are_rejected() {
    let cams = "1 PINHOLE 100 100 100 100 50 50\n";
    let imgs = "1 1 0 0 0 0 0 1 1 a.png\n50 50 1 50 50 2\n";
    let pts = "1 0 0 1 0 0 0 0 1 0\n2 0 0 1 0 0 0 0 1 1\n";
    let mut db = parse_sfm_text(cams, imgs, pts).unwrap();
    assert!(matches!(
        db.scale_by_marker(PointId(1), PointId(2), 1.0),
        Err(IngestError::CoincidentMarkers(..))
    ));
}

fn coverage_db() -> ReprojectionDatabase {
    // A sees {1,2,3}, B sees {2,3}, C sees {3,4}
    let cams = "1 PINHOLE 100 100 100 100 50 50\n";
    let imgs = "\
1 1 0 0 0 0 0 0 1 a.png
10 10 1 20 20 2 30 30 3
2 1 0 0 0 0 0 0 1 b.png
20 20 2 30 30 3
3 1 0 0 0 0 0 0 1 c.png
30 30 3 40 40 4
";
    let pts = "\
1 0 0 1 0 0 0 0 1 0
2 0 0 1 0 0 0 0 1 1 2 0
3 0 0 1 0 0 0 0 1 2 2 1 3 0
4 0 0 1 0 0 0 0 3 1
";
    parse_sfm_text(cams, imgs, pts).unwrap()
}

/// Exhaustive minimum set cover, used to confirm the greedy answer on the fixture.
fn brute_force_cover(db: &ReprojectionDatabase) -> usize {
    let images: Vec<ImageId> = db.photos().keys().copied().collect();
    let all: BTreeSet<PointId> = db.points().keys().copied().collect();
    (1u32..(1 << images.len()))
        .filter(|mask| {
            let mut cov = BTreeSet::new();
            for (i, img) in images.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    cov.extend(db.observed_identities(*img).unwrap());
                }
            }
            cov == all
        })
        .map(|m| m.count_ones() as usize)
        .min()
        .unwrap()
}

#[test]
fn greedy_reduction_examples() {
    let db = coverage_db();
    let picks = db.reduce_photo_set(1.0).unwrap();
    assert_eq!(picks, vec![ImageId(1), ImageId(3)]);
    assert_eq!(picks.len(), brute_force_cover(&db));
    assert!(db.reduce_photo_set(0.0).unwrap().is_empty());
    assert!(db.reduce_photo_set(1.5).is_err());

    let single = single_camera_db();
    assert_eq!(single.reduce_photo_set(1.0).unwrap(), vec![ImageId(1)]);

    let empty = parse_sfm_text("", "", "").unwrap();
    assert!(empty.reduce_photo_set(1.0).unwrap().is_empty());
}

#[test]
fn greedy_reduction_is_monotone_without_duplicates() {
    let room = roomtrace_core::fixtures::box_room(Vec3::new(5.0, 4.0, 3.0), 0.5, 0.0, 3);
    let mut previous: Vec<ImageId> = Vec::new();
    for step in 0..=10 {
        let picks = room.db.reduce_photo_set(step as f64 / 10.0).unwrap();
        let unique: BTreeSet<ImageId> = picks.iter().copied().collect();
        assert_eq!(unique.len(), picks.len());
        assert!(picks.starts_with(&previous));
        previous = picks;
    }
}
