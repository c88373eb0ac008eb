//! HTTP API for browsing an embedding: point dump, region queries, cluster
//! labels and asynchronous edge-ensemble jobs.

use std::collections::HashMap;
use std::io::Cursor;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::services::ServeDir;

use mousemap::embed::umap::read_model;
use mousemap::embed::{EmbedError, EmbeddingModel};
use mousemap::explore::{ensemble, query_region, CannyParams, DirFrames, LabelStore, Region};
use mousemap::ingest::IngestError;
use mousemap::windows::{read_meta, WindowError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Model(#[from] EmbedError),
    #[error(transparent)]
    Windows(#[from] WindowError),
    #[error(transparent)]
    Labels(#[from] IngestError),
    #[error("embedding must be 2-D to serve, got {0} dimensions")]
    Dims(usize),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

/// Where the served artifacts live.
#[derive(Debug, Clone, Default)]
pub struct SessionConfig {
    pub model: PathBuf,
    pub labels: PathBuf,
    pub frames: Option<PathBuf>,
    /// Built UI bundle served at `/`.
    pub ui: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
enum JobStatus {
    Running,
    Done { windows: usize, skipped: usize, frames: Vec<String> },
    Failed { error: String },
}

#[derive(Debug)]
struct Job {
    status: JobStatus,
    png: Vec<Vec<u8>>,
}

/// Loaded artifacts. Everything but the label store and job table is
/// read-only after load.
pub struct Session {
    model: EmbeddingModel,
    omega: Option<usize>,
    model_dir: PathBuf,
    frames: Option<PathBuf>,
    ui: Option<PathBuf>,
    labels: Mutex<LabelStore>,
    jobs: Mutex<HashMap<u64, Job>>,
    next_job: AtomicU64,
}

impl Session {
    pub fn load(config: &SessionConfig) -> Result<Session, ServiceError> {
        let model = read_model(&config.model, false)?;
        if model.coords.ncols() != 2 {
            return Err(ServiceError::Dims(model.coords.ncols()));
        }
        let omega = match &model.windows {
            Some(rel) => Some(read_meta(&config.model.join(rel))?.omega),
            None => None,
        };
        Ok(Session {
            model,
            omega,
            model_dir: config.model.clone(),
            frames: config.frames.clone(),
            ui: config.ui.clone(),
            labels: Mutex::new(LabelStore::open(&config.labels)?),
            jobs: Mutex::new(HashMap::new()),
            next_job: AtomicU64::new(1),
        })
    }

    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }
}

type Shared = Arc<Session>;

fn error(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

fn bad_request(message: impl std::fmt::Display) -> Response {
    error(StatusCode::BAD_REQUEST, message)
}

fn internal(message: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, message)
}

#[allow(clippy::result_large_err)]
fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(bad_request)
}

pub fn router(session: Shared) -> Router {
    let api = Router::new()
        .route("/api/embedding", get(embedding))
        .route("/api/meta", get(meta))
        .route("/api/query", axum::routing::post(query))
        .route("/api/labels", get(list_labels).post(create_label))
        .route("/api/labels/{id}", get(get_label).patch(edit_label).delete(delete_label))
        .route("/api/ensemble", axum::routing::post(start_ensemble))
        .route("/api/ensemble/{job}", get(job_status))
        .route("/api/ensemble/{job}/frame/{t}", get(job_frame));
    let app = match &session.ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    };
    app.with_state(session)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(session: Session, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind { addr, source })?;
    log::info!("serving {} points on http://{}", session.len(), listener.local_addr().unwrap_or(addr));
    axum::serve(listener, router(Arc::new(session))).await.map_err(ServiceError::Serve)
}

async fn placeholder() -> Html<&'static str> {
    Html("<!doctype html><title>mousemap</title><p>No UI bundle configured. The JSON API is under <code>/api/</code>.</p>\n")
}

#[derive(Serialize)]
struct PointOut<'a> {
    id: usize,
    x: f32,
    y: f32,
    video: &'a str,
    start: usize,
}

async fn embedding(State(s): State<Shared>) -> Response {
    let points: Vec<PointOut> = s
        .model
        .index
        .iter()
        .enumerate()
        .map(|(id, w)| PointOut { id, x: s.model.coords[[id, 0]], y: s.model.coords[[id, 1]], video: &w.video_id, start: w.start_frame })
        .collect();
    Json(points).into_response()
}

async fn meta(State(s): State<Shared>) -> Response {
    let mut per_video = std::collections::BTreeMap::<&str, usize>::new();
    for w in &s.model.index {
        *per_video.entry(&w.video_id).or_default() += 1;
    }
    Json(json!({
        "n": s.model.len(),
        "model": s.model_dir.display().to_string(),
        "a": s.model.a,
        "b": s.model.b,
        "params": s.model.params,
        "omega": s.omega,
        "frames": s.frames.is_some(),
        "videos": per_video,
    }))
    .into_response()
}

async fn query(State(s): State<Shared>, body: Bytes) -> Response {
    let region: Region = match parse_json(&body) {
        Ok(r) => r,
        Err(e) => return e,
    };
    Json(query_region(&s.model.coords, &s.model.index, &region)).into_response()
}

// ---------------------------------------------------------------------------
// labels

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewLabel {
    region: Region,
    text: String,
    #[serde(default)]
    author: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelEdit {
    text: String,
}

async fn list_labels(State(s): State<Shared>) -> Response {
    let store = s.labels.lock().expect("label store lock");
    Json(store.list()).into_response()
}

async fn get_label(State(s): State<Shared>, UrlPath(id): UrlPath<u64>) -> Response {
    let store = s.labels.lock().expect("label store lock");
    match store.get(id) {
        Some(l) => Json(l).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no label {id}")),
    }
}

async fn create_label(State(s): State<Shared>, body: Bytes) -> Response {
    let req: NewLabel = match parse_json(&body) {
        Ok(r) => r,
        Err(e) => return e,
    };
    let result = s.labels.lock().expect("label store lock").add(req.region, &req.text, &req.author);
    match result {
        Ok(id) => (StatusCode::CREATED, Json(json!({ "id": id }))).into_response(),
        Err(e) => internal(e),
    }
}

async fn edit_label(State(s): State<Shared>, UrlPath(id): UrlPath<u64>, body: Bytes) -> Response {
    let req: LabelEdit = match parse_json(&body) {
        Ok(r) => r,
        Err(e) => return e,
    };
    let result = s.labels.lock().expect("label store lock").edit(id, &req.text);
    match result {
        Ok(true) => StatusCode::NO_CONTENT.into_response(),
        Ok(false) => error(StatusCode::NOT_FOUND, format!("no label {id}")),
        Err(e) => internal(e),
    }
}

async fn delete_label(State(s): State<Shared>, UrlPath(id): UrlPath<u64>) -> Response {
    let result = s.labels.lock().expect("label store lock").delete(id);
    match result {
        Ok(true) => StatusCode::NO_CONTENT.into_response(),
        Ok(false) => error(StatusCode::NOT_FOUND, format!("no label {id}")),
        Err(e) => internal(e),
    }
}

// ---------------------------------------------------------------------------
// ensemble jobs

/// A region object plus optional `low`, `high` and `sigma` canny parameters.
fn parse_ensemble_request(body: &Bytes) -> Result<(Region, CannyParams), String> {
    let mut map: serde_json::Map<String, Value> = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    let mut params = CannyParams::default();
    for (key, slot) in [("low", &mut params.low), ("high", &mut params.high), ("sigma", &mut params.sigma)] {
        if let Some(v) = map.remove(key) {
            *slot = v.as_f64().ok_or_else(|| format!("{key} must be a number"))?;
        }
    }
    params.validate()?;
    let region = serde_json::from_value(Value::Object(map)).map_err(|e| e.to_string())?;
    Ok((region, params))
}

fn encode_png(img: &image::GrayImage) -> Result<Vec<u8>, String> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).map_err(|e| e.to_string())?;
    Ok(out.into_inner())
}

fn run_job(s: &Session, region: &Region, params: &CannyParams, job: u64) -> Result<(JobStatus, Vec<Vec<u8>>), String> {
    let frames = s.frames.as_ref().ok_or("no frames directory configured")?;
    let omega = s.omega.ok_or("model does not reference a window dataset")?;
    let hits = query_region(&s.model.coords, &s.model.index, region);
    let windows: Vec<_> = hits.ids.iter().map(|&i| s.model.index[i].clone()).collect();
    let clip = ensemble(&windows, omega, &DirFrames::new(frames), params, Some(*region)).map_err(|e| e.to_string())?;
    let png = clip.frames.iter().map(|f| encode_png(&f.to_image())).collect::<Result<Vec<_>, _>>()?;
    let urls = (0..png.len()).map(|t| format!("/api/ensemble/{job}/frame/{t}")).collect();
    Ok((JobStatus::Done { windows: clip.windows, skipped: clip.skipped, frames: urls }, png))
}

async fn start_ensemble(State(s): State<Shared>, body: Bytes) -> Response {
    let (region, params) = match parse_ensemble_request(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e),
    };
    if s.frames.is_none() {
        return error(StatusCode::CONFLICT, "no frames directory configured");
    }
    let id = s.next_job.fetch_add(1, Ordering::Relaxed);
    s.jobs.lock().expect("job table lock").insert(id, Job { status: JobStatus::Running, png: Vec::new() });
    let worker = s.clone();
    tokio::task::spawn_blocking(move || {
        let job = match run_job(&worker, &region, &params, id) {
            Ok((status, png)) => Job { status, png },
            Err(error) => Job { status: JobStatus::Failed { error }, png: Vec::new() },
        };
        worker.jobs.lock().expect("job table lock").insert(id, job);
    });
    (StatusCode::ACCEPTED, Json(json!({ "job": id, "status": format!("/api/ensemble/{id}") }))).into_response()
}

async fn job_status(State(s): State<Shared>, UrlPath(job): UrlPath<u64>) -> Response {
    match s.jobs.lock().expect("job table lock").get(&job) {
        Some(j) => Json(&j.status).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no job {job}")),
    }
}

async fn job_frame(State(s): State<Shared>, UrlPath((job, t)): UrlPath<(u64, usize)>) -> Response {
    let jobs = s.jobs.lock().expect("job table lock");
    match jobs.get(&job).and_then(|j| j.png.get(t)) {
        Some(png) => ([(header::CONTENT_TYPE, "image/png")], Body::from(png.clone())).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no frame {t} for job {job}")),
    }
}
