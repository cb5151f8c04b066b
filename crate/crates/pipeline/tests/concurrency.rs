mod common;

use std::time::{Duration, Instant};

use axum::http::StatusCode;
use axum::Router;
use common::api::*;
use common::*;
use serde_json::json;

#[tokio::test(flavor = "multi_thread")]
async fn reads_are_served_while_a_job_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, ws) = app(tmp.path());
    ws.apply(op("reconstruct", json!({}))).unwrap();
    ws.apply(op("export-stl", json!({}))).unwrap();
    let mut params = quick_simulation(3_000_000);
    params["rays"]["t_max"] = json!(1.0);
    let job = post(&app, "/simulate", params).await.json();
    let id = job["job_id"].as_u64().unwrap();
    let mut running = false;
    for _ in 0..400 {
        if get(&app, &format!("/jobs/{id}")).await.json()["state"] == json!("RUNNING") {
            running = true;
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    assert!(running, "job never started");
    let started = Instant::now();
    let uris = ["/health", "/masks", "/photos", "/project", "/pointcloud?stage=clean", "/mesh.stl"];
    let replies = futures_join(&app, &uris).await;
    let elapsed = started.elapsed();
    for (uri, status) in uris.iter().zip(replies) {
        assert_eq!(status, StatusCode::OK, "{uri}");
    }
    let after = get(&app, &format!("/jobs/{id}")).await.json();
    assert_eq!(after["state"], json!("RUNNING"), "reads finished while the job was still running");
    assert!(elapsed < Duration::from_secs(5), "reads took {elapsed:?}");
}

async fn futures_join(app: &Router, uris: &[&str]) -> Vec<StatusCode> {
    let handles: Vec<_> = uris
        .iter()
        .map(|uri| {
            let (app, uri) = (app.clone(), uri.to_string());
            tokio::spawn(async move { get(&app, &uri).await.status })
        })
        .collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

