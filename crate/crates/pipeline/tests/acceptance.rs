//! Desk-scale acceptance checks, one test per requirement. Each prints a
//! single `PASS`/`FAIL` line with its measurement and wall time, then
//! asserts; tolerances and runtime budgets are fixed here.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use roomtrace_core::acoustics::{
    convolve, convolve_direct, decay_time, fft_convolve, ism_polyhedral, ism_shoebox, ray_trace, t30,
    RayTraceParams, RenderSettings, ReverbPrediction, SceneConfig, ShoeboxRoom, SimulationScene, T30_RANGE,
};
use roomtrace_core::fixtures::{annotated_box_mesh, three_camera_scene};
use roomtrace_core::geom2d::{distance_to_polygon, is_simple, Vec2};
use roomtrace_core::geometry::{
    fill_holes, parse_sidecar, ransac_plane, read_stl, validate_mesh, write_stl, FacetMaterial,
};
use roomtrace_core::ingest::{ImageId, PointId, Projection, ReprojectionDatabase};
use roomtrace_core::masking::{extrapolate_mask, Extrapolation, MaskId, PolygonMask};
use roomtrace_core::materials::{AbsorptionSpectrum, MeasurementDatabase, MeasurementId};
use roomtrace_core::Vec3;

/// Prints the verdict line, then fails the test if the check or the time
/// budget did not hold.
fn verdict(id: u32, name: &str, started: Instant, budget: Option<Duration>, ok: bool, detail: String) {
    let elapsed = started.elapsed();
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let pass = ok && in_time;
    let limit = budget.map(|b| format!(" (limit {:.0} s)", b.as_secs_f64())).unwrap_or_default();
    println!(
        "acceptance {id:02} {name}: {} in {:.2} s{limit}; {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(ok, "{name}: {detail}");
    assert!(in_time, "{name}: took {elapsed:?}{limit}");
}

fn uniform(alpha: f64) -> FacetMaterial {
    FacetMaterial {
        measurement_id: MeasurementId(1),
        name: format!("uniform {alpha}"),
        spectrum: AbsorptionSpectrum::uniform(alpha).unwrap(),
    }
}

fn render(fs: u32) -> RenderSettings {
    RenderSettings {
        sample_rate: fs,
        ..Default::default()
    }
}

fn brute_lookup(db: &ReprojectionDatabase, image: ImageId, u: f64, v: f64, r: f64) -> Vec<PointId> {
    let mut best = std::collections::BTreeMap::<PointId, f64>::new();
    let mut offer = |pid: PointId, pu: f64, pv: f64| {
        let d = ((pu - u).powi(2) + (pv - v).powi(2)).sqrt();
        if d <= r {
            let e = best.entry(pid).or_insert(d);
            *e = e.min(d);
        }
    };
    for o in &db.photo(image).unwrap().observations {
        if let Some(pid) = o.identity {
            offer(pid, o.u, o.v);
        }
    }
    for p in db.points().values() {
        if let Projection::Pixel { u, v, .. } = db.project(image, &p.position).unwrap() {
            offer(p.id, u, v);
        }
    }
    let mut out: Vec<(PointId, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out.into_iter().map(|x| x.0).collect()
}

#[test]
fn acceptance_01_reprojection_roundtrip() {
    let started = Instant::now();
    let db = three_camera_scene(1);
    let (mut sum, mut n) = (0.0, 0usize);
    for p in db.points().values() {
        for t in &p.track {
            let obs = db.photo(t.image).unwrap().observations[t.observation];
            let (u, v) = db.project(t.image, &p.position).unwrap().pixel().unwrap();
            sum += ((u - obs.u).powi(2) + (v - obs.v).powi(2)).sqrt();
            n += 1;
        }
    }
    let mean = sum / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let images: Vec<ImageId> = db.photos().keys().copied().collect();
    let mut mismatches = 0;
    let queries = 2000;
    for _ in 0..queries {
        let img = images[rng.random_range(0..images.len())];
        let (u, v, r) = (rng.random_range(-10.0..650.0), rng.random_range(-10.0..490.0), rng.random_range(0.0..25.0));
        if db.lookup_identities_near_pixel(img, u, v, r).unwrap() != brute_lookup(&db, img, u, v, r) {
            mismatches += 1;
        }
    }
    let ok = db.photos().len() == 3 && db.points().len() == 200 && mean < 1e-3 && mismatches == 0;
    let detail = format!(
        "{} cameras, {} points, mean reprojection error {mean:.2e} px over {n} observations, {mismatches}/{queries} lookup mismatches",
        db.photos().len(),
        db.points().len()
    );
    verdict(1, "reprojection roundtrip", started, Some(Duration::from_secs(1)), ok, detail);
}

/// In front, in bounds and not hidden: no other point lands within 1 px
/// at under 0.95 of its depth, unless the target photo observes it.
fn brute_visible_pixel(db: &ReprojectionDatabase, target: ImageId, pid: PointId) -> Option<Vec2> {
    let photo = db.photo(target).unwrap();
    let cam = db.camera_of(photo);
    let project = |id: PointId| match db.project(target, &db.point(id).unwrap().position).unwrap() {
        Projection::Pixel { u, v, depth } => Some((Vec2::new(u, v), depth)),
        Projection::BehindCamera => None,
    };
    let (px, depth) = project(pid)?;
    if !((0.0..cam.width as f64).contains(&px.x) && (0.0..cam.height as f64).contains(&px.y)) {
        return None;
    }
    let observed = photo.observations.iter().any(|o| o.identity == Some(pid));
    let hidden = db.points().keys().any(|other| {
        *other != pid && project(*other).is_some_and(|(q, d)| (q - px).norm() <= 1.0 && d < 0.95 * depth)
    });
    (observed || !hidden).then_some(px)
}

fn star_polygon(rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    loop {
        let n = rng.random_range(3..10);
        let c = Vec2::new(rng.random_range(130.0..510.0), rng.random_range(100.0..380.0));
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        angles.dedup_by(|a, b| (*a - *b).abs() < 0.05);
        let poly: Vec<Vec2> = angles
            .iter()
            .map(|a| {
                let p = c + Vec2::new(a.cos(), a.sin()) * rng.random_range(30.0..150.0);
                Vec2::new(p.x.clamp(0.0, 640.0), p.y.clamp(0.0, 480.0))
            })
            .collect();
        if poly.len() >= 3 && is_simple(&poly) {
            return poly;
        }
    }
}

#[test]
fn acceptance_02_mask_extrapolation_oracle() {
    let started = Instant::now();
    let db = three_camera_scene(3);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut wrong, mut kept_total) = (0, 0, 0);
    while checked < 50 {
        let source = ImageId(rng.random_range(1..=3));
        let target = ImageId(rng.random_range(1..=3));
        let poly = star_polygon(&mut rng);
        let mask = PolygonMask::new(&db, MaskId(1), source, poly.clone(), 0.0).unwrap();
        if mask.identities().is_empty() {
            continue;
        }
        // the mask's own identity set, from observations inside the polygon
        // and points whose projection falls inside it
        let own: BTreeSet<PointId> = db
            .points()
            .keys()
            .copied()
            .filter(|pid| {
                let inside = |px: Vec2| distance_to_polygon(&poly, px) <= 0.0;
                let observed = db
                    .photo(source)
                    .unwrap()
                    .observations
                    .iter()
                    .any(|o| o.identity == Some(*pid) && inside(Vec2::new(o.u, o.v)));
                observed || brute_visible_pixel(&db, source, *pid).is_some_and(inside)
            })
            .collect();
        let expected: Vec<(PointId, Vec2)> = own
            .iter()
            .filter_map(|pid| brute_visible_pixel(&db, target, *pid).map(|px| (*pid, px)))
            .collect();
        let got = match extrapolate_mask(&db, &mask, target, MaskId(2)).unwrap() {
            Extrapolation::Mask { kept, .. } => kept.into_iter().map(|k| k.0).collect::<Vec<_>>(),
            Extrapolation::NotVisible { kept } => {
                if kept != expected.len() {
                    wrong += 1;
                }
                checked += 1;
                continue;
            }
        };
        let expected_ids: Vec<PointId> = expected.iter().map(|e| e.0).collect();
        if own != *mask.identities() || got != expected_ids {
            wrong += 1;
        }
        kept_total += got.len();
        checked += 1;
    }
    let detail = format!("{checked} random masks, {wrong} differ from brute-force projection, {kept_total} identities kept");
    verdict(2, "mask extrapolation oracle", started, Some(Duration::from_secs(5)), wrong == 0, detail);
}

#[test]
fn acceptance_03_ransac_plane_recovery() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let normal = Vec3::new(0.3, -0.5, 0.81).normalize();
    let offset = 1.2;
    let (e1, e2) = {
        let a = normal.cross(&Vec3::x()).normalize();
        (a, normal.cross(&a))
    };
    let noise = Normal::new(0.0, 0.005).unwrap();
    let on_plane = 2000;
    let mut points: Vec<Vec3> = (0..on_plane)
        .map(|_| {
            normal * (offset + noise.sample(&mut rng))
                + e1 * rng.random_range(-2.0..2.0)
                + e2 * rng.random_range(-2.0..2.0)
        })
        .collect();
    for _ in 0..500 {
        points.push(Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
    }
    let fit = ransac_plane(&points, 0.02, 500, 17, 0).unwrap();
    let angle = fit.normal.dot(&normal).abs().min(1.0).acos().to_degrees();
    let recalled = fit.inliers.iter().filter(|&&i| i < on_plane).count();
    let recall = recalled as f64 / on_plane as f64;
    let ok = angle < 1.0 && recall >= 0.99;
    let detail = format!("normal error {angle:.4} deg, inlier recall {:.2}%", 100.0 * recall);
    verdict(3, "ransac plane recovery", started, Some(Duration::from_secs(1)), ok, detail);
}

#[test]
fn acceptance_04_mesh_validation() {
    let started = Instant::now();
    let cube = annotated_box_mesh(Vec3::new(1.0, 1.0, 1.0), uniform(0.2));
    let whole = validate_mesh(&cube);
    let mut holed = cube.clone();
    holed.triangles.remove(7);
    holed.facet_material.remove(7);
    holed.facet_source.remove(7);
    let open = validate_mesh(&holed);
    let (filled, _) = fill_holes(&holed, 3);
    let closed = validate_mesh(&filled);
    let ok = whole.watertight
        && (whole.signed_volume - 1.0).abs() <= 1e-9
        && !open.watertight
        && open.boundary_loops.len() == 1
        && closed.watertight
        && (closed.signed_volume - 1.0).abs() <= 1e-9;
    let detail = format!(
        "cube watertight={} volume={:.12}; holed watertight={} loops={}; filled watertight={} volume={:.12}",
        whole.watertight,
        whole.signed_volume,
        open.watertight,
        open.boundary_loops.len(),
        closed.watertight,
        closed.signed_volume
    );
    verdict(4, "mesh validation", started, None, ok, detail);
}

#[test]
fn acceptance_05_stl_format() {
    let started = Instant::now();
    let cube = annotated_box_mesh(Vec3::new(1.0, 1.0, 1.0), uniform(0.2));
    let bytes = write_stl(&cube);
    let back = read_stl(&bytes).unwrap();
    let worst = (0..cube.facet_count())
        .flat_map(|f| cube.corners(f).into_iter().zip(back.corners(f)).map(|(a, b)| (a - b).amax()))
        .fold(0.0, f64::max);
    let through_f32 = (0..cube.facet_count())
        .flat_map(|f| cube.corners(f).into_iter().zip(back.corners(f)))
        .all(|(a, b)| (0..3).all(|k| a[k] as f32 as f64 == b[k]));
    let ok = bytes.len() == 684 && back.facet_count() == 12 && through_f32;
    let detail = format!("{} bytes, {} facets back, worst vertex delta {worst:.1e}", bytes.len(), back.facet_count());
    verdict(5, "stl format", started, None, ok, detail);
}

const BOX: [f64; 3] = [5.0, 4.0, 3.0];

#[test]
fn acceptance_06_ism_cross_oracle() {
    let started = Instant::now();
    let (src, rcv) = (Vec3::new(1.3, 1.7, 1.1), Vec3::new(3.6, 2.4, 1.8));
    let alpha = 0.3;
    let scene = SimulationScene::new(
        annotated_box_mesh(Vec3::from(BOX), uniform(alpha)),
        SceneConfig {
            source: src,
            receiver: rcv,
            render: render(16_000),
            ..Default::default()
        },
    )
    .unwrap();
    let room = ShoeboxRoom::uniform(Vec3::from(BOX), AbsorptionSpectrum::uniform(alpha).unwrap()).unwrap();
    let mut worst = 0.0f64;
    let mut same_length = true;
    for order in 0..=2 {
        let poly = ism_polyhedral(&scene, order, false).unwrap();
        let shoe = ism_shoebox(&room, src, rcv, order, &render(16_000)).unwrap();
        same_length &= poly.ir.samples.len() == shoe.ir.samples.len() && poly.sources.len() == shoe.sources.len();
        for (a, b) in poly.ir.samples.iter().zip(&shoe.ir.samples) {
            worst = worst.max((a - b).abs());
        }
    }
    let ok = same_length && worst <= 1e-6;
    let detail = format!("orders 0-2, worst per-sample difference {worst:.2e}");
    verdict(6, "ism cross-oracle", started, Some(Duration::from_secs(10)), ok, detail);
}

#[test]
fn acceptance_07_direct_path() {
    let started = Instant::now();
    let room = ShoeboxRoom::uniform(Vec3::new(6.0, 4.0, 3.0), AbsorptionSpectrum::uniform(0.3).unwrap()).unwrap();
    let res = ism_shoebox(&room, Vec3::new(1.0, 2.0, 1.5), Vec3::new(4.0, 2.0, 1.5), 0, &render(16_000)).unwrap();
    let (peak, amp) = res.ir.peak().unwrap();
    let expected = 1.0 / (4.0 * PI * 3.0);
    // 0.02653 is the exact value rounded to four significant figures
    let ok = peak == 140 && (amp - expected).abs() <= 1e-6 && format!("{amp:.5}") == "0.02653";
    let detail = format!("peak at sample {peak}, amplitude {amp:.7} (1/(4 pi r) = {expected:.7})");
    verdict(7, "direct path", started, None, ok, detail);
}

#[test]
fn acceptance_08_reverberation_physics() {
    let started = Instant::now();
    let alpha = 0.2;
    let (src, rcv) = (Vec3::new(1.3, 1.7, 1.1), Vec3::new(3.6, 2.4, 1.8));
    let room = ShoeboxRoom::uniform(Vec3::from(BOX), AbsorptionSpectrum::uniform(alpha).unwrap()).unwrap();
    let bands = RenderSettings::default().bands;
    let predicted = ReverbPrediction::for_shoebox(&room, &bands).unwrap();
    let band = bands.iter().position(|b| *b == 1000.0).unwrap();
    let (sabine, eyring) = (predicted[band].sabine, predicted[band].eyring.unwrap());

    let scene = SimulationScene::new(
        annotated_box_mesh(Vec3::from(BOX), uniform(alpha)),
        SceneConfig {
            source: src,
            receiver: rcv,
            seed: 5,
            render: render(8000),
            ..Default::default()
        },
    )
    .unwrap();
    let rays = ray_trace(
        &scene,
        &RayTraceParams {
            ray_count: 200_000,
            t_max: 1.2,
            ..Default::default()
        },
    )
    .unwrap();
    let traced = decay_time(&rays.histograms[band], rays.bin_width, T30_RANGE).unwrap();
    let ism = ism_shoebox(&room, src, rcv, 50, &render(16_000)).unwrap();
    let imaged = t30(&ism.ir, Some(band)).unwrap();

    let traced_err = traced / eyring - 1.0;
    let imaged_err = imaged / sabine - 1.0;
    let ok = (sabine - 0.5138).abs() < 5e-4
        && (eyring - 0.4606).abs() < 5e-4
        && traced_err.abs() <= 0.20
        && imaged_err.abs() <= 0.25;
    let detail = format!(
        "1 kHz: ray-traced T30 {traced:.4} s vs Eyring {eyring:.4} s ({:+.1}%), image-source T30 {imaged:.4} s vs Sabine {sabine:.4} s ({:+.1}%)",
        100.0 * traced_err,
        100.0 * imaged_err
    );
    verdict(8, "reverberation physics", started, Some(Duration::from_secs(120)), ok, detail);
}

#[test]
fn acceptance_09_energy_conservation() {
    let started = Instant::now();
    let mut worst_ray = 0.0f64;
    let mut worst_total = 0.0f64;
    for scattering in [0.0, 0.4] {
        let scene = SimulationScene::new(
            annotated_box_mesh(Vec3::from(BOX), uniform(0.2)),
            SceneConfig {
                source: Vec3::new(1.3, 1.7, 1.1),
                receiver: Vec3::new(3.6, 2.4, 1.8),
                scattering,
                seed: 9,
                render: render(8000),
                ..Default::default()
            },
        )
        .unwrap();
        let res = ray_trace(
            &scene,
            &RayTraceParams {
                ray_count: 10_000,
                t_max: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        let l = &res.ledger;
        worst_ray = worst_ray.max(l.max_ray_imbalance);
        for b in 0..l.initial.len() {
            worst_total = worst_total.max((l.initial[b] - l.absorbed[b] - l.deposited[b] - l.residual[b]).abs());
        }
    }
    let ok = worst_ray <= 1e-9 && worst_total <= 1e-9;
    let detail = format!("10000 rays, worst per-ray imbalance {worst_ray:.1e}, worst band total {worst_total:.1e}");
    verdict(9, "energy conservation", started, None, ok, detail);
}

#[test]
fn acceptance_10_convolution() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let ir: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
    let oracle: Vec<f64> = (0..ir.len() + x.len() - 1)
        .map(|n| (0..ir.len()).filter(|k| n >= *k && n - k < x.len()).map(|k| ir[k] * x[n - k]).sum())
        .collect();
    let fft = fft_convolve(&ir, &x);
    let worst = oracle.iter().zip(&fft).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let direct_matches = convolve_direct(&ir, &x).iter().zip(&oracle).all(|(a, b)| (a - b).abs() <= 1e-12);
    let mut unit = vec![0.0; 64];
    unit[0] = 1.0;
    let identity = convolve(&unit, 8000, &x, 8000, false).unwrap();
    let exact = identity[..256] == x[..] && identity[256..].iter().all(|v| *v == 0.0);
    let ok = fft.len() == oracle.len() && worst <= 1e-9 && direct_matches && exact;
    let detail = format!("64x256 worst FFT difference {worst:.1e}, unit impulse identity exact={exact}");
    verdict(10, "convolution", started, None, ok, detail);
}

#[test]
fn acceptance_11_determinism() {
    let started = Instant::now();
    let run = |threads: usize| {
        let tmp = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let ws = annotated_project(tmp.path());
            run_to_simulation(&ws, 20_000);
            let masks = serde_json::to_string(&ws.snapshot().masks).unwrap();
            (ws.artifact_hashes(), masks)
        })
    };
    let (a, b, c) = (run(1), run(4), run(4));
    let ok = a == b && b == c && a.0.len() >= 10;
    let differing: Vec<&String> = a.0.keys().filter(|k| a.0.get(*k) != b.0.get(*k)).collect();
    let detail = format!("{} artifacts compared across 1 and 4 workers, differing: {differing:?}", a.0.len());
    verdict(11, "determinism", started, None, ok, detail);
}

#[test]
fn acceptance_12_materials_search() {
    let started = Instant::now();
    let db = MeasurementDatabase::bundled();
    let mut failures = Vec::new();
    for m in db.iter() {
        let ranked = db.suggest_measurements(&m.name, 3).unwrap();
        if ranked[0].id != m.id || (ranked[0].score - 1.0).abs() > 1e-12 {
            failures.push(m.name.clone());
        }
    }
    let disjoint = db.suggest_measurements("xylophone quartz", 100).unwrap();
    let all_zero = !disjoint.is_empty() && disjoint.iter().all(|r| r.score == 0.0);
    let ok = failures.is_empty() && all_zero;
    let detail = format!(
        "{} exact-name queries, misses {failures:?}; disjoint query scores all zero={all_zero}",
        db.iter().count()
    );
    verdict(12, "materials search", started, None, ok, detail);
}

#[test]
fn acceptance_13_end_to_end_desk_pipeline() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let ws = annotated_project(tmp.path());
    let reconstructed = ws.apply(op("reconstruct", serde_json::json!({ "seed": 1 }))).unwrap();
    let validated = ws.apply(op("validate", serde_json::json!({}))).unwrap();
    ws.apply(op("export-stl", serde_json::json!({}))).unwrap();
    let params = serde_json::json!({ "source": SOURCE, "receiver": RECEIVER, "seed": 1 });
    let simulated = ws.apply(op("simulate", params)).unwrap();

    let p = ws.snapshot();
    let export = p.export.as_ref().unwrap();
    let stl = read_stl(&export.stl.read(ws.dir()).unwrap()).unwrap();
    let sidecar = parse_sidecar(&export.sidecar.read_string(ws.dir()).unwrap()).unwrap();
    let mesh = roomtrace::exported_mesh(&ws, &p).unwrap();
    let report = validate_mesh(&mesh);
    let truth = BOX.iter().product::<f64>();
    let volume_err = (report.signed_volume - truth).abs() / truth;
    let annotated = sidecar.facets.len() == stl.facet_count()
        && sidecar.facets.iter().all(|f| f.measurement_id.is_some() && !f.alphas.is_empty());
    let energy = simulated["summary"]["energy"].as_f64().unwrap();
    let peak = simulated["summary"]["peak_amplitude"].as_f64().unwrap_or(0.0).abs();
    let ok = validated["valid"] == serde_json::json!(true)
        && report.watertight
        && annotated
        && report.unannotated_facets.is_empty()
        && volume_err <= 0.05
        && energy > 0.0
        && peak > 0.0;
    let detail = format!(
        "{} facets from {} planes, watertight={}, every facet annotated={annotated}, volume {:.3} m3 ({:+.2}% of {truth}), RIR energy {energy:.3e}, peak {peak:.3e}",
        stl.facet_count(),
        reconstructed["planes"],
        report.watertight,
        report.signed_volume,
        100.0 * (report.signed_volume / truth - 1.0)
    );
    verdict(13, "end-to-end desk pipeline", started, Some(Duration::from_secs(300)), ok, detail);
}
