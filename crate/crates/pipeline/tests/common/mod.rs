#![allow(dead_code)]

use std::path::{Path, PathBuf};

use roomtrace::{Operation, Workspace};
use roomtrace_core::acoustics::{write_wav, WavSignal};
use roomtrace_core::fixtures::box_room;
use roomtrace_core::ingest::write_sfm_text;
use roomtrace_core::materials::BUNDLED_SAMPLE_CSV;
use roomtrace_core::Vec3;
use serde_json::{json, Value};

pub const DIMS: [f64; 3] = [5.0, 4.0, 3.0];
pub const SOURCE: [f64; 3] = [1.5, 1.2, 1.1];
pub const RECEIVER: [f64; 3] = [3.4, 2.7, 1.6];

/// Writes the box-room SfM text, mask suggestions and absorption table.
pub fn write_fixture(dir: &Path) -> PathBuf {
    let room = box_room(Vec3::from(DIMS), 0.25, 0.002, 7);
    let sfm = write_sfm_text(&room.db);
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("cameras.txt"), sfm.cameras).unwrap();
    std::fs::write(dir.join("images.txt"), sfm.images).unwrap();
    std::fs::write(dir.join("points3D.txt"), sfm.points).unwrap();
    std::fs::write(dir.join("suggestions.json"), room.suggestions).unwrap();
    std::fs::write(dir.join("absorption.csv"), BUNDLED_SAMPLE_CSV).unwrap();
    dir.to_path_buf()
}

pub fn op(stage: &str, params: Value) -> Operation {
    Operation::from_stage(stage, params).unwrap()
}

/// A project with the fixture imported, masks imported and every mask
/// assigned its best-matching measurement.
pub fn annotated_project(root: &Path) -> Workspace {
    let fixture = write_fixture(&root.join("fixture"));
    let ws = Workspace::init(&root.join("project"), false).unwrap();
    ws.apply(op("import", json!({ "sfm_dir": fixture }))).unwrap();
    ws.apply(op("mask-import", json!({ "document": fixture.join("suggestions.json") }))).unwrap();
    ws.apply(op("materials-load", json!({ "csv": fixture.join("absorption.csv") }))).unwrap();
    ws.apply(op("materials-auto-assign", json!({}))).unwrap();
    ws
}

/// Parameters for a quick hybrid simulation.
pub fn quick_simulation(rays: usize) -> Value {
    json!({
        "source": SOURCE,
        "receiver": RECEIVER,
        "sample_rate": 16000,
        "seed": 3,
        "rays": { "ray_count": rays, "t_max": 0.6 },
    })
}

/// Reconstruct, validate, export and simulate on an annotated project.
pub fn run_to_simulation(ws: &Workspace, rays: usize) -> Value {
    ws.apply(op("reconstruct", json!({ "seed": 5 }))).unwrap();
    ws.apply(op("validate", json!({}))).unwrap();
    ws.apply(op("export-stl", json!({}))).unwrap();
    ws.apply(op("simulate", quick_simulation(rays))).unwrap()
}

pub fn click_wav(sample_rate: u32) -> Vec<u8> {
    let mut samples = vec![0.0; 800];
    samples[10] = 0.5;
    samples[400] = -0.25;
    write_wav(&WavSignal { sample_rate, samples }).unwrap()
}
pub mod api;
