//! Synthetic structure-from-motion scenes generated analytically: known
//! cameras look at known points and observations are exact projections.
//! Used by the test suites and by the CLI demo.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::ingest::{
    CameraId, CameraModel, ImageId, Observation, PhotoPose, PointId, PointIdentity,
    ReprojectionDatabase, TrackEntry,
};
use crate::geometry::{AnnotatedMesh, FacetMaterial};
use crate::Vec3;

/// World-to-camera rotation and translation for a camera at `center`
/// looking at `target`, with image rows pointing away from `up`.
pub fn look_at(center: Vec3, target: Vec3, up: Vec3) -> (UnitQuaternion<f64>, Vec3) {
    let forward = (target - center).normalize();
    let mut right = forward.cross(&up);
    if right.norm() < 1e-9 {
        right = forward.cross(&Vec3::new(1.0, 0.0, 0.0));
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::new(0.0, 1.0, 0.0));
        }
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let m = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    let translation = -(rotation * center);
    (rotation, translation)
}

#[derive(Debug, Clone)]
pub struct SyntheticView {
    pub center: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
}

/// Builds a database by projecting `points` through `views`. Each point
/// keeps the id `first_id + index`; points no view sees are dropped.
pub fn project_scene(
    views: &[SyntheticView],
    points: &[(Vec3, [u8; 3])],
    untracked_per_photo: usize,
    seed: u64,
) -> ReprojectionDatabase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cameras = BTreeMap::new();
    let mut photos = BTreeMap::new();
    let mut tracks: BTreeMap<PointId, Vec<TrackEntry>> = BTreeMap::new();

    for (i, view) in views.iter().enumerate() {
        let cam_id = CameraId(i as u32 + 1);
        let img_id = ImageId(i as u32 + 1);
        let cam = CameraModel::pinhole(
            cam_id,
            view.width,
            view.height,
            view.focal,
            view.focal,
            view.width as f64 / 2.0,
            view.height as f64 / 2.0,
        );
        let (rotation, translation) = look_at(view.center, view.target, view.up);
        let mut observations = Vec::new();
        for (j, (p, _)) in points.iter().enumerate() {
            let pc = rotation * p + translation;
            if let Some((u, v)) = cam.project_camera_frame(&pc) {
                if cam.contains_pixel(u, v) {
                    let pid = PointId(j as u64 + 1);
                    tracks.entry(pid).or_default().push(TrackEntry {
                        image: img_id,
                        observation: observations.len(),
                    });
                    observations.push(Observation {
                        u,
                        v,
                        identity: Some(pid),
                    });
                }
            }
        }
        for _ in 0..untracked_per_photo {
            observations.push(Observation {
                u: rng.random_range(0.0..view.width as f64),
                v: rng.random_range(0.0..view.height as f64),
                identity: None,
            });
        }
        cameras.insert(cam_id, cam);
        photos.insert(
            img_id,
            PhotoPose {
                id: img_id,
                rotation,
                translation,
                camera: cam_id,
                name: format!("IMG_{:04}.png", i + 1),
                observations,
            },
        );
    }

    let mut identities = BTreeMap::new();
    for (pid, track) in tracks {
        let (position, color) = points[(pid.0 - 1) as usize];
        identities.insert(
            pid,
            PointIdentity {
                id: pid,
                position,
                color,
                reproj_error: 0.0,
                track,
            },
        );
    }
    ReprojectionDatabase::new(cameras, photos, identities).expect("synthetic scene is consistent")
}

/// Three cameras facing a cloud of 200 points, every point seen by all of them.
pub fn three_camera_scene(seed: u64) -> ReprojectionDatabase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<(Vec3, [u8; 3])> = (0..200)
        .map(|_| {
            let p = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.8..0.8),
                rng.random_range(4.0..6.0),
            );
            (p, [rng.random(), rng.random(), rng.random()])
        })
        .collect();
    let target = Vec3::new(0.0, 0.0, 5.0);
    let up = Vec3::new(0.0, -1.0, 0.0);
    let views: Vec<SyntheticView> = [-1.0, 0.0, 1.0]
        .iter()
        .map(|&x| SyntheticView {
            center: Vec3::new(x, 0.1 * x, 0.0),
            target,
            up,
            width: 640,
            height: 480,
            focal: 500.0,
        })
        .collect();
    project_scene(&views, &points, 5, seed ^ 0x5eed)
}

/// Axis-aligned box room sampled on its six inner surfaces.
#[derive(Debug, Clone)]
pub struct BoxRoom {
    pub db: ReprojectionDatabase,
    pub dims: Vec3,
    /// Surface label per identity (`floor`, `ceiling`, `wall_x0`, ...).
    pub labels: BTreeMap<PointId, &'static str>,
    /// Segmentation suggestions in the external JSON format, one polygon
    /// per surface drawn in the photo that sees it best.
    pub suggestions: String,
}

pub const BOX_SURFACES: [(&str, &str); 6] = [
    ("floor", "carpet heavy on concrete"),
    ("ceiling", "plaster smooth on brick"),
    ("wall_x0", "plywood paneling"),
    ("wall_x1", "glass window"),
    ("wall_y0", "brick unglazed"),
    ("wall_y1", "heavy velour drapery"),
];

/// Samples a `dims` box on a `spacing` grid with small position noise and
/// places six inward-looking cameras plus a few stray interior points.
pub fn box_room(dims: Vec3, spacing: f64, noise: f64, seed: u64) -> BoxRoom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.max(0.0)).expect("valid deviation");
    let mut points: Vec<(Vec3, [u8; 3])> = Vec::new();
    let mut point_labels: Vec<&'static str> = Vec::new();

    let steps = |len: f64| -> Vec<f64> {
        let n = (len / spacing).round().max(1.0) as usize;
        (0..=n).map(|i| len * i as f64 / n as f64).collect()
    };
    let (xs, ys, zs) = (steps(dims.x), steps(dims.y), steps(dims.z));
    let inner = |v: &[f64]| v[1..v.len() - 1].to_vec();
    let mut push = |p: Vec3, label: &'static str, rng: &mut ChaCha8Rng| {
        let n = if noise > 0.0 {
            Vec3::new(jitter.sample(rng), jitter.sample(rng), jitter.sample(rng))
        } else {
            Vec3::zeros()
        };
        let shade = match label {
            "floor" => [120, 40, 40],
            "ceiling" => [230, 230, 225],
            "wall_x0" => [160, 110, 60],
            "wall_x1" => [150, 200, 230],
            "wall_y0" => [170, 80, 60],
            _ => [40, 40, 120],
        };
        points.push((p + n, shade));
        point_labels.push(label);
    };
    // faces own their interiors; edges go to floor/ceiling and x-walls
    for &x in &xs {
        for &y in &ys {
            push(Vec3::new(x, y, 0.0), "floor", &mut rng);
            push(Vec3::new(x, y, dims.z), "ceiling", &mut rng);
        }
    }
    for &y in &ys {
        for &z in &inner(&zs) {
            push(Vec3::new(0.0, y, z), "wall_x0", &mut rng);
            push(Vec3::new(dims.x, y, z), "wall_x1", &mut rng);
        }
    }
    for &x in &inner(&xs) {
        for &z in &inner(&zs) {
            push(Vec3::new(x, 0.0, z), "wall_y0", &mut rng);
            push(Vec3::new(x, dims.y, z), "wall_y1", &mut rng);
        }
    }
    let stray_count = 6;
    for _ in 0..stray_count {
        let p = Vec3::new(
            rng.random_range(0.3 * dims.x..0.7 * dims.x),
            rng.random_range(0.3 * dims.y..0.7 * dims.y),
            rng.random_range(0.3 * dims.z..0.7 * dims.z),
        );
        points.push((p, [0, 255, 0]));
        point_labels.push("stray");
    }

    let c = dims / 2.0;
    let z_up = Vec3::new(0.0, 0.0, 1.0);
    let view = |center: Vec3, target: Vec3, up: Vec3| SyntheticView {
        center,
        target,
        up,
        width: 800,
        height: 600,
        focal: 800.0 / 3.2,
    };
    let views = vec![
        view(
            Vec3::new(c.x, c.y, dims.z - 0.2),
            Vec3::new(c.x, c.y, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ),
        view(
            Vec3::new(c.x, c.y, 0.2),
            Vec3::new(c.x, c.y, dims.z),
            Vec3::new(0.0, 1.0, 0.0),
        ),
        view(Vec3::new(dims.x - 0.2, c.y, c.z), Vec3::new(0.0, c.y, c.z), z_up),
        view(Vec3::new(0.2, c.y, c.z), Vec3::new(dims.x, c.y, c.z), z_up),
        view(Vec3::new(c.x, dims.y - 0.2, c.z), Vec3::new(c.x, 0.0, c.z), z_up),
        view(Vec3::new(c.x, 0.2, c.z), Vec3::new(c.x, dims.y, c.z), z_up),
    ];
    let db = project_scene(&views, &points, 3, seed ^ 0xb0c5);
    let labels: BTreeMap<PointId, &'static str> = db
        .points()
        .keys()
        .map(|pid| (*pid, point_labels[(pid.0 - 1) as usize]))
        .collect();

    let mut suggestions = Vec::new();
    for (surface_index, (surface, hint)) in BOX_SURFACES.iter().enumerate() {
        let image = ImageId(surface_index as u32 + 1);
        let photo = db.photo(image).expect("view exists");
        let pixels: Vec<crate::geom2d::Vec2> = photo
            .observations
            .iter()
            .filter_map(|o| {
                let pid = o.identity?;
                (labels[&pid] == *surface).then(|| crate::geom2d::Vec2::new(o.u, o.v))
            })
            .collect();
        let hull = crate::geom2d::convex_hull(&pixels);
        if hull.len() < 3 {
            continue;
        }
        suggestions.push(json!({
            "image_id": image.0,
            "polygon": hull.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
            "category_label": surface,
            "material_hint": hint,
            "confidence": 0.9,
        }));
    }
    // the stray interior points as a low-confidence "chair" the default
    // threshold drops
    let photo = db.photo(ImageId(1)).expect("view exists");
    let stray_pixels: Vec<crate::geom2d::Vec2> = photo
        .observations
        .iter()
        .filter(|o| o.identity.is_some_and(|pid| labels[&pid] == "stray"))
        .map(|o| crate::geom2d::Vec2::new(o.u, o.v))
        .collect();
    let chair = crate::geom2d::convex_hull(&stray_pixels);
    suggestions.push(json!({
        "image_id": 1,
        "polygon": chair.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
        "category_label": "chair",
        "material_hint": "upholstered seats",
        "confidence": 0.2,
    }));
    let suggestions = serde_json::to_string_pretty(&suggestions).expect("json");

    BoxRoom {
        db,
        dims,
        labels,
        suggestions,
    }
}

/// Closed axis-aligned box `[0, dims]` with 12 outward-facing triangles,
/// two per face, faces ordered -x, +x, -y, +y, -z, +z.
pub fn box_mesh(dims: Vec3) -> AnnotatedMesh {
    let v = |i: usize| Vec3::new(
        if i & 1 == 1 { dims.x } else { 0.0 },
        if i & 2 == 2 { dims.y } else { 0.0 },
        if i & 4 == 4 { dims.z } else { 0.0 },
    );
    // corner index bits: x = 1, y = 2, z = 4
    let quads: [[usize; 4]; 6] = [
        [0, 4, 6, 2],
        [1, 3, 7, 5],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 2, 3, 1],
        [4, 5, 7, 6],
    ];
    let mut triangles = Vec::new();
    for q in quads {
        triangles.push([q[0], q[1], q[2]]);
        triangles.push([q[0], q[2], q[3]]);
    }
    AnnotatedMesh::new((0..8).map(v).collect(), triangles)
}

/// [`box_mesh`] with every facet assigned `material`.
pub fn annotated_box_mesh(dims: Vec3, material: FacetMaterial) -> AnnotatedMesh {
    let mut mesh = box_mesh(dims);
    for f in 0..mesh.facet_count() {
        mesh.set_facet_material(f, material.clone());
    }
    mesh
}
