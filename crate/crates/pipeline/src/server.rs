//! JSON/HTTP interface over a workspace. Mutations go through the job
//! worker or the workspace writer; reads use snapshots.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use roomtrace_core::acoustics::receiver_from_photo;
use roomtrace_core::geometry::{write_ply, PointCloud};
use roomtrace_core::ingest::{IngestError, ImageId};
use roomtrace_core::masking::{compute_edge_map, EdgeParams, MaskId, MaskingError, Raster};
use roomtrace_core::materials::{MaterialsError, MeasurementId};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::error::PipelineError;
use crate::jobs::JobQueue;
use crate::ops::{
    AssignParams, AuralizeParams, DivideParams, ExtrapolateParams, MaskCreateParams, MaskRef, MergeParams, Operation,
    SimulateParams,
};
use crate::project::{write_artifact, SCHEMA_VERSION};
use crate::workspace::Workspace;

const MAX_UPLOAD_BYTES: usize = 256 << 20;

pub struct ApiError(pub PipelineError);

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        ApiError(e)
    }
}

fn status_of(e: &PipelineError) -> StatusCode {
    use PipelineError as P;
    let unknown_ingest = |e: &IngestError| matches!(e, IngestError::UnknownImage(_) | IngestError::UnknownPoint(_));
    match e {
        P::NotFound(_) | P::NoProject(_) => StatusCode::NOT_FOUND,
        P::Ingest(i) if unknown_ingest(i) => StatusCode::NOT_FOUND,
        P::Masking(MaskingError::UnknownMask(_)) => StatusCode::NOT_FOUND,
        P::Masking(MaskingError::Ingest(i)) if unknown_ingest(i) => StatusCode::NOT_FOUND,
        P::Materials(MaterialsError::UnknownMeasurement(_)) => StatusCode::NOT_FOUND,
        P::MissingPrerequisite { .. } | P::ProjectExists(_) | P::SchemaVersion { .. } => StatusCode::CONFLICT,
        P::UnknownStage(_) | P::Parameters { .. } | P::Invalid(_) => StatusCode::BAD_REQUEST,
        P::Ingest(_) | P::Masking(_) | P::Materials(_) | P::Geometry(_) | P::Acoustics(_) | P::InputChanged { .. } => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        P::Tampered { .. } | P::File { .. } | P::Io(_) | P::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_of(&self.0), Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, PipelineError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(PipelineError::Invalid(format!("request handler failed: {e}"))))?
        .map_err(ApiError)
}

fn ws(state: &JobQueue) -> Arc<Workspace> {
    state.workspace().clone()
}

pub fn router(jobs: JobQueue) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/project", get(project))
        .route("/photos", get(photos))
        .route("/photos/{id}/image", get(photo_image))
        .route("/photos/{id}/edges", get(photo_edges))
        .route("/photos/{id}/receiver", get(photo_receiver))
        .route("/masks", get(list_masks).post(create_mask))
        .route("/masks/merge", post(merge_masks))
        .route("/masks/{id}", delete(delete_mask))
        .route("/masks/{id}/extrapolate", post(extrapolate_mask))
        .route("/masks/{id}/divide", post(divide_mask))
        .route("/masks/{id}/regenerate", post(regenerate_mask))
        .route("/masks/{id}/material", put(assign_material))
        .route("/materials/suggest", post(suggest))
        .route("/pointcloud", get(pointcloud))
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(get_job))
        .route("/mesh.stl", get(mesh_stl))
        .route("/mesh.sidecar.json", get(mesh_sidecar))
        .route("/simulate", post(simulate))
        .route("/rir/{file}", get(rir))
        .route("/auralize", post(auralize).layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES)))
        .with_state(jobs)
}

/// Binds first so a busy port is an error before anything is served.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener, PipelineError> {
    TcpListener::bind(addr).await.map_err(PipelineError::Io)
}

pub async fn serve(listener: TcpListener, jobs: JobQueue) -> Result<(), PipelineError> {
    axum::serve(listener, router(jobs)).await.map_err(PipelineError::Io)
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "schema_version": SCHEMA_VERSION }))
}

async fn project(State(jobs): State<JobQueue>) -> Json<Value> {
    Json(serde_json::to_value(&*jobs.workspace().snapshot()).unwrap_or(Value::Null))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PhotoInfo {
    pub id: ImageId,
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub observations: usize,
    pub tracked: usize,
    /// Member of the reduced working set (all photos when none was chosen).
    pub working: bool,
}

async fn photos(State(jobs): State<JobQueue>) -> ApiResult<Json<Vec<PhotoInfo>>> {
    let ws = ws(&jobs);
    blocking(move || {
        let p = ws.snapshot();
        let db = ws.database(&p, "photos")?;
        let working = p.working_photos(&db);
        Ok(db
            .photos()
            .values()
            .map(|photo| {
                let cam = db.camera_of(photo);
                PhotoInfo {
                    id: photo.id,
                    name: photo.name.clone(),
                    width: cam.width,
                    height: cam.height,
                    observations: photo.observations.len(),
                    tracked: photo.observations.iter().filter(|o| o.identity.is_some()).count(),
                    working: working.contains(&photo.id),
                }
            })
            .collect())
    })
    .await
    .map(Json)
}

fn photo_path(ws: &Workspace, id: ImageId) -> Result<PathBuf, PipelineError> {
    let p = ws.snapshot();
    let db = ws.database(&p, "photos")?;
    let name = db.photo(id)?.name.clone();
    let dir = p
        .inputs
        .as_ref()
        .and_then(|i| i.photo_dir.clone())
        .ok_or_else(|| PipelineError::NotFound("photo directory".into()))?;
    let path = PathBuf::from(dir).join(&name);
    if !path.is_file() {
        return Err(PipelineError::NotFound(format!("raster {name}")));
    }
    Ok(path)
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn photo_image(State(jobs): State<JobQueue>, Path(id): Path<u32>) -> ApiResult<Response> {
    let ws = ws(&jobs);
    blocking(move || {
        let path = photo_path(&ws, ImageId(id))?;
        let bytes = std::fs::read(&path).map_err(PipelineError::file(&path))?;
        Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
    })
    .await
}

#[derive(Debug, Deserialize)]
struct EdgeQuery {
    sigma: Option<f64>,
    low: Option<f64>,
    high: Option<f64>,
}

async fn photo_edges(
    State(jobs): State<JobQueue>,
    Path(id): Path<u32>,
    Query(q): Query<EdgeQuery>,
) -> ApiResult<Response> {
    let ws = ws(&jobs);
    blocking(move || {
        let path = photo_path(&ws, ImageId(id))?;
        let bytes = std::fs::read(&path).map_err(PipelineError::file(&path))?;
        let img = image::load_from_memory(&bytes).map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))?;
        let d = EdgeParams::default();
        let params = EdgeParams {
            sigma: q.sigma.unwrap_or(d.sigma),
            low: q.low.unwrap_or(d.low),
            high: q.high.unwrap_or(d.high),
        };
        let mut map = compute_edge_map(&Raster::from_image(&img), params)?;
        map.image = Some(ImageId(id));
        Ok(([(header::CONTENT_TYPE, "image/png")], map.to_png()).into_response())
    })
    .await
}

async fn photo_receiver(State(jobs): State<JobQueue>, Path(id): Path<u32>) -> ApiResult<Json<Value>> {
    let ws = ws(&jobs);
    blocking(move || {
        let db = ws.database(&ws.snapshot(), "photos")?;
        let pose = receiver_from_photo(&db, ImageId(id)).map_err(|e| match e {
            roomtrace_core::acoustics::AcousticsError::Ingest(i) => PipelineError::Ingest(i),
            other => PipelineError::Acoustics(other),
        })?;
        Ok(Json(serde_json::to_value(pose)?))
    })
    .await
}

async fn list_masks(State(jobs): State<JobQueue>) -> Json<Value> {
    let p = jobs.workspace().snapshot();
    Json(serde_json::to_value(p.masks.iter().collect::<Vec<_>>()).unwrap_or(Value::Null))
}

/// Applies a mask operation and answers with the mask it names in `key`.
async fn mask_mutation(jobs: JobQueue, op: Operation, status: StatusCode) -> ApiResult<Response> {
    let ws = ws(&jobs);
    blocking(move || {
        let value = ws.apply(op)?;
        let mask = value
            .get("mask")
            .and_then(|m| serde_json::from_value::<MaskId>(m.clone()).ok())
            .and_then(|id| ws.snapshot().masks.get(id).ok().cloned());
        let body = match mask {
            Some(m) => serde_json::to_value(m)?,
            None => value,
        };
        Ok((status, Json(body)).into_response())
    })
    .await
}

async fn create_mask(State(jobs): State<JobQueue>, Json(body): Json<MaskCreateParams>) -> ApiResult<Response> {
    mask_mutation(jobs, Operation::MaskCreate(body), StatusCode::CREATED).await
}

async fn delete_mask(State(jobs): State<JobQueue>, Path(id): Path<u32>) -> ApiResult<StatusCode> {
    let ws = ws(&jobs);
    blocking(move || ws.apply(Operation::MaskDelete(MaskRef { mask: MaskId(id) }))).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct TargetQuery {
    target: Option<u32>,
}

async fn extrapolate_mask(
    State(jobs): State<JobQueue>,
    Path(id): Path<u32>,
    Query(q): Query<TargetQuery>,
) -> ApiResult<Json<Value>> {
    let ws = ws(&jobs);
    let op = Operation::MaskExtrapolate(ExtrapolateParams {
        mask: MaskId(id),
        target: q.target.map(ImageId),
    });
    blocking(move || ws.apply(op)).await.map(Json)
}

async fn merge_masks(State(jobs): State<JobQueue>, Json(body): Json<MergeParams>) -> ApiResult<Response> {
    mask_mutation(jobs, Operation::MaskMerge(body), StatusCode::CREATED).await
}

#[derive(Debug, Deserialize)]
struct CutBody {
    cut: Vec<[f64; 2]>,
}

async fn divide_mask(State(jobs): State<JobQueue>, Path(id): Path<u32>, Json(body): Json<CutBody>) -> ApiResult<Json<Value>> {
    let ws = ws(&jobs);
    let op = Operation::MaskDivide(DivideParams {
        mask: MaskId(id),
        cut: body.cut,
    });
    blocking(move || ws.apply(op)).await.map(Json)
}

async fn regenerate_mask(State(jobs): State<JobQueue>, Path(id): Path<u32>) -> ApiResult<Json<Value>> {
    let ws = ws(&jobs);
    blocking(move || ws.apply(Operation::MaskRegenerate(MaskRef { mask: MaskId(id) }))).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct MaterialBody {
    measurement: Option<MeasurementId>,
    #[serde(default)]
    texture_attribute: Option<String>,
}

async fn assign_material(
    State(jobs): State<JobQueue>,
    Path(id): Path<u32>,
    Json(body): Json<MaterialBody>,
) -> ApiResult<Response> {
    let op = Operation::MaterialAssign(AssignParams {
        mask: MaskId(id),
        measurement: body.measurement,
        texture_attribute: body.texture_attribute,
    });
    mask_mutation(jobs, op, StatusCode::OK).await
}

#[derive(Debug, Deserialize)]
struct SuggestBody {
    query: String,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    5
}

async fn suggest(State(jobs): State<JobQueue>, Json(body): Json<SuggestBody>) -> ApiResult<Json<Value>> {
    let ws = ws(&jobs);
    blocking(move || {
        let mdb = ws.measurements(&ws.snapshot())?;
        let ranked = mdb.suggest_measurements(&body.query, body.k)?;
        let out: Vec<Value> = ranked
            .iter()
            .map(|r| {
                let m = mdb.get(r.id).expect("ranked entries exist");
                json!({
                    "id": r.id,
                    "name": m.name,
                    "description": m.description,
                    "score": r.score,
                    "spectrum": m.spectrum,
                })
            })
            .collect();
        Ok(Json(Value::Array(out)))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct StageQuery {
    stage: Option<String>,
}

async fn pointcloud(State(jobs): State<JobQueue>, Query(q): Query<StageQuery>) -> ApiResult<Response> {
    let ws = ws(&jobs);
    blocking(move || {
        let p = ws.snapshot();
        let stage = q.stage.unwrap_or_else(|| "raw".into());
        let text = match stage.as_str() {
            "raw" => write_ply(&PointCloud::from_database(&*ws.database(&p, "pointcloud")?)).into_bytes(),
            "filtered" | "clean" => {
                let g = p.geometry.as_ref().ok_or(PipelineError::MissingPrerequisite {
                    stage: "pointcloud",
                    needs: "reconstruct",
                })?;
                let a = if stage == "filtered" { &g.cloud_filtered } else { &g.cloud_clean };
                a.read(ws.dir())?
            }
            other => return Err(PipelineError::Invalid(format!("unknown cloud stage `{other}` (raw, filtered, clean)"))),
        };
        Ok(([(header::CONTENT_TYPE, "application/ply")], text).into_response())
    })
    .await
}

#[derive(Debug, Deserialize)]
struct JobBody {
    stage: String,
    #[serde(default)]
    params: Value,
}

async fn submit_job(State(jobs): State<JobQueue>, Json(body): Json<JobBody>) -> ApiResult<Response> {
    let job = jobs.run_stage(&body.stage, body.params)?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn get_job(State(jobs): State<JobQueue>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let job = jobs.get(id).ok_or_else(|| PipelineError::NotFound(format!("job {id}")))?;
    Ok(Json(serde_json::to_value(job).map_err(PipelineError::Json)?))
}

async fn export_file(jobs: JobQueue, sidecar: bool) -> ApiResult<Response> {
    let ws = ws(&jobs);
    blocking(move || {
        let p = ws.snapshot();
        let e = p.export.as_ref().ok_or_else(|| PipelineError::NotFound("exported mesh".into()))?;
        let (artifact, mime) = if sidecar { (&e.sidecar, "application/json") } else { (&e.stl, "model/stl") };
        Ok(([(header::CONTENT_TYPE, mime)], artifact.read(ws.dir())?).into_response())
    })
    .await
}

async fn mesh_stl(State(jobs): State<JobQueue>) -> ApiResult<Response> {
    export_file(jobs, false).await
}

async fn mesh_sidecar(State(jobs): State<JobQueue>) -> ApiResult<Response> {
    export_file(jobs, true).await
}

async fn simulate(State(jobs): State<JobQueue>, Json(body): Json<SimulateParams>) -> ApiResult<Response> {
    let job = jobs.submit(Operation::Simulate(body))?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

/// `/rir/{id}.wav` is the impulse response, `/rir/{id}.json` its summary.
async fn rir(State(jobs): State<JobQueue>, Path(file): Path<String>) -> ApiResult<Response> {
    let ws = ws(&jobs);
    blocking(move || {
        let not_found = || PipelineError::NotFound(format!("rir {file}"));
        let (id, ext) = file.rsplit_once('.').ok_or_else(not_found)?;
        let id: u32 = id.parse().map_err(|_| not_found())?;
        let p = ws.snapshot();
        let rec = p.simulations.iter().find(|s| s.id == id).ok_or_else(not_found)?;
        let (artifact, mime) = match ext {
            "wav" => (&rec.wav, "audio/wav"),
            "json" => (&rec.summary, "application/json"),
            _ => return Err(not_found()),
        };
        Ok(([(header::CONTENT_TYPE, mime)], artifact.read(ws.dir())?).into_response())
    })
    .await
}

/// Multipart fields: `rir` (simulation id), `signal` (WAV file) and an
/// optional `normalize` (`true`/`false`). Answers with the convolved WAV.
async fn auralize(State(jobs): State<JobQueue>, mut form: Multipart) -> ApiResult<Response> {
    let bad = |m: String| ApiError(PipelineError::Invalid(m));
    let (mut rir, mut signal, mut normalize): (Option<u32>, Option<Bytes>, bool) = (None, None, true);
    while let Some(field) = form.next_field().await.map_err(|e| bad(e.to_string()))? {
        match field.name().unwrap_or_default() {
            "rir" => {
                let text = field.text().await.map_err(|e| bad(e.to_string()))?;
                rir = Some(text.trim().parse().map_err(|_| bad(format!("rir must be a simulation id, got `{text}`")))?);
            }
            "signal" => signal = Some(field.bytes().await.map_err(|e| bad(e.to_string()))?),
            "normalize" => normalize = field.text().await.map_err(|e| bad(e.to_string()))?.trim() != "false",
            _ => {}
        }
    }
    let rir = rir.ok_or_else(|| bad("missing `rir` field".into()))?;
    let signal = signal.ok_or_else(|| bad("missing `signal` field".into()))?;
    let ws = ws(&jobs);
    blocking(move || {
        let upload = write_artifact(ws.dir(), "uploads", "signal", "wav", &signal)?;
        let value = ws.apply(Operation::Auralize(AuralizeParams {
            rir,
            signal: upload.resolve(ws.dir()),
            normalize,
        }))?;
        let id = value["auralization"].as_u64().unwrap_or_default() as u32;
        let p = ws.snapshot();
        let rec = p
            .auralizations
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| PipelineError::NotFound(format!("auralization {id}")))?;
        Ok(([(header::CONTENT_TYPE, "audio/wav")], rec.output.read(ws.dir())?).into_response())
    })
    .await
}
