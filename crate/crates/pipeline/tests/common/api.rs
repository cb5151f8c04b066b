#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use roomtrace::{server, JobQueue, Workspace};
use serde_json::{json, Value};
use tower::ServiceExt;

use super::{annotated_project, op};

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

pub async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let content_type = res
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Method::GET, uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    send(app, Method::POST, uri, Some(body)).await
}

pub async fn finish_job(app: &Router, reply: Reply) -> Value {
    assert_eq!(reply.status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&reply.body));
    let id = reply.json()["job_id"].as_u64().unwrap();
    for _ in 0..2400 {
        let job = get(app, &format!("/jobs/{id}")).await.json();
        match job["state"].as_str().unwrap() {
            "DONE" => return job,
            "FAILED" => panic!("job failed: {job}"),
            _ => tokio::time::sleep(Duration::from_millis(50)).await,
        }
    }
    panic!("job {id} did not finish");
}

/// Gray rasters named like the fixture photos, with a bright rectangle.
pub fn write_photos(dir: &Path, ws: &Workspace) {
    std::fs::create_dir_all(dir).unwrap();
    let db = ws.database(&ws.snapshot(), "test").unwrap();
    for photo in db.photos().values() {
        let img = image::GrayImage::from_fn(800, 600, |x, y| {
            image::Luma([if (200..600).contains(&x) && (150..450).contains(&y) { 220 } else { 30 }])
        });
        img.save(dir.join(&photo.name)).unwrap();
    }
}

pub fn app(root: &Path) -> (Router, Arc<Workspace>) {
    let ws = annotated_project(root);
    let photos = root.join("photos");
    write_photos(&photos, &ws);
    let fixture = root.join("fixture");
    ws.apply(op("import", json!({ "sfm_dir": fixture, "photo_dir": photos }))).unwrap();
    ws.apply(op("mask-import", json!({ "document": fixture.join("suggestions.json") }))).unwrap();
    ws.apply(op("materials-auto-assign", json!({}))).unwrap();
    let ws = Arc::new(ws);
    (server::router(JobQueue::start(ws.clone())), ws)
}

