//! HTTP job API.
//!
//! | method | path                        | result                          |
//! |--------|-----------------------------|---------------------------------|
//! | POST   | `/api/jobs`                 | 202 `{id}` (multipart: `image`, optional `config`) |
//! | GET    | `/api/jobs/{id}`            | job record                      |
//! | GET    | `/api/jobs/{id}/result.png` | rendered image once done        |
//! | GET    | `/api/jobs/{id}/strokes`    | stroke plan JSON once done      |
//! | POST   | `/api/jobs/{id}/replan`     | 202 `{id}` (body: config patch) |
//! | DELETE | `/api/jobs/{id}`            | 204                             |
//!
//! Errors are `{"code": .., "message": ..}` objects; config errors add a
//! `pointer`. Jobs live in an LRU table; feature extraction results are
//! cached separately so a replan that only touches planning or rendering
//! parameters skips straight to planning.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lru::LruCache;
use serde::Serialize;
use serde_json::{json, Value};
use strokeforge::config::PlanConfig;
use strokeforge::error::Error as CoreError;
use strokeforge::io::{decode_image, encode_png};
use strokeforge::pipeline::run_plan_prepared;
use strokeforge::plan_json::serialize_plan;
use strokeforge::planning::{prepare, PlanReport, Prepared};
use strokeforge::raster::RasterImage;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;
pub const JOB_CAPACITY: usize = 64;
pub const FEATURE_CACHE_CAPACITY: usize = 8;
pub const DEFAULT_WORKERS: usize = 2;

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub workers: usize,
    pub cors_origin: Option<HeaderValue>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            workers: DEFAULT_WORKERS,
            cors_origin: None,
        }
    }
}

impl ServiceOptions {
    pub fn new(workers: usize, cors_origin: Option<&str>) -> Result<Self, String> {
        if workers == 0 {
            return Err("workers must be at least 1".into());
        }
        let cors_origin = cors_origin
            .map(|o| HeaderValue::from_str(o).map_err(|e| format!("invalid CORS origin {o:?}: {e}")))
            .transpose()?;
        Ok(Self { workers, cors_origin })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug)]
struct JobResult {
    png: Bytes,
    plan_json: String,
    report: PlanReport,
}

#[derive(Debug, Default, Clone, Copy, Serialize)]
struct Timings {
    prepare_ms: f64,
    plan_ms: f64,
}

#[derive(Debug)]
struct Job {
    state: JobState,
    parent: Option<String>,
    config: PlanConfig,
    image: Arc<RasterImage>,
    image_hash: u64,
    result: Option<Arc<JobResult>>,
    error: Option<String>,
    timings: Timings,
    features_reused: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct FeatureKey {
    image_hash: u64,
    features: String,
    seed: u64,
}

impl FeatureKey {
    fn new(image_hash: u64, config: &PlanConfig) -> Self {
        Self {
            image_hash,
            features: serde_json::to_string(&config.features).expect("feature params serialize"),
            seed: config.seed,
        }
    }
}

struct CachedFeatures {
    image: Arc<RasterImage>,
    prepared: Arc<Prepared>,
}

struct AppState {
    jobs: Mutex<LruCache<String, Job>>,
    features: Mutex<LruCache<FeatureKey, CachedFeatures>>,
    permits: Arc<Semaphore>,
}

fn image_hash(image: &RasterImage) -> u64 {
    let mut h = DefaultHasher::new();
    (image.width(), image.height(), image.channels()).hash(&mut h);
    for v in image.data() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    pointer: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            pointer: None,
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no job with id {id:?}"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn too_large() -> Self {
        Self::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "payload_too_large",
            format!("request body exceeds {MAX_BODY_BYTES} bytes"),
        )
    }

    fn from_body_status(status: StatusCode, message: String) -> Self {
        if status == StatusCode::PAYLOAD_TOO_LARGE {
            Self::too_large()
        } else {
            Self::new(status, "bad_request", message)
        }
    }

    fn config(err: CoreError) -> Self {
        match err {
            CoreError::Config { pointer, message } => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                code: "invalid_config",
                message,
                pointer: Some(pointer),
            },
            other => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(p) = self.pointer {
            body["pointer"] = Value::String(p);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

impl AppState {
    fn insert(&self, job: Job) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.jobs.lock().expect("job table poisoned").put(id.clone(), job);
        id
    }

    fn with_job<T>(&self, id: &str, f: impl FnOnce(&mut Job) -> T) -> Option<T> {
        self.jobs.lock().expect("job table poisoned").get_mut(id).map(f)
    }

    fn features_for(&self, image: &Arc<RasterImage>, hash: u64, config: &PlanConfig) -> strokeforge::error::Result<(Arc<Prepared>, bool)> {
        let key = FeatureKey::new(hash, config);
        if let Some(hit) = self.features.lock().expect("feature cache poisoned").get(&key) {
            if Arc::ptr_eq(&hit.image, image) || *hit.image == **image {
                return Ok((hit.prepared.clone(), true));
            }
        }
        let prepared = Arc::new(prepare(image, config)?);
        self.features.lock().expect("feature cache poisoned").put(
            key,
            CachedFeatures {
                image: image.clone(),
                prepared: prepared.clone(),
            },
        );
        Ok((prepared, false))
    }

    fn compute(&self, image: &Arc<RasterImage>, hash: u64, config: &PlanConfig) -> Result<(JobResult, Timings, bool), String> {
        let t0 = Instant::now();
        let (prepared, reused) = self.features_for(image, hash, config).map_err(|e| e.to_string())?;
        let t1 = Instant::now();
        let out = run_plan_prepared(&prepared, config).map_err(|e| e.to_string())?;
        let png = encode_png(&out.image).map_err(|e| e.to_string())?;
        let timings = Timings {
            prepare_ms: (t1 - t0).as_secs_f64() * 1e3,
            plan_ms: t1.elapsed().as_secs_f64() * 1e3,
        };
        Ok((
            JobResult {
                png: Bytes::from(png),
                plan_json: serialize_plan(&out.plan),
                report: out.report,
            },
            timings,
            reused,
        ))
    }
}

fn spawn_job(state: Arc<AppState>, id: String) {
    tokio::spawn(async move {
        let Ok(_permit) = state.permits.clone().acquire_owned().await else {
            return;
        };
        let started = state.with_job(&id, |job| {
            job.state = JobState::Running;
            (job.image.clone(), job.image_hash, job.config.clone())
        });
        let Some((image, hash, config)) = started else {
            return;
        };
        let worker = state.clone();
        let outcome = tokio::task::spawn_blocking(move || worker.compute(&image, hash, &config))
            .await
            .unwrap_or_else(|e| Err(format!("job aborted: {e}")));
        state.with_job(&id, |job| match outcome {
            Ok((result, timings, reused)) => {
                job.state = JobState::Done;
                job.result = Some(Arc::new(result));
                job.timings = timings;
                job.features_reused = reused;
            }
            Err(message) => {
                job.state = JobState::Failed;
                job.error = Some(message);
            }
        });
    });
}

fn enqueue(state: &Arc<AppState>, job: Job) -> String {
    let id = state.insert(job);
    spawn_job(state.clone(), id.clone());
    id
}

fn accepted(id: String) -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response()
}

async fn create_job(
    State(state): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<Response> {
    let mut multipart = multipart.map_err(|e| ApiError::from_body_status(e.status(), e.body_text()))?;
    let mut image_bytes = None;
    let mut config_text = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::from_body_status(e.status(), e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::from_body_status(e.status(), e.body_text()))?;
        match name.as_str() {
            "image" => image_bytes = Some(data),
            "config" => config_text = Some(data),
            other => return Err(ApiError::bad_request(format!("unexpected multipart field {other:?}"))),
        }
    }
    let image_bytes = image_bytes.ok_or_else(|| ApiError::bad_request("missing multipart field \"image\""))?;
    let config = match config_text {
        None => PlanConfig::default(),
        Some(raw) => {
            let text = std::str::from_utf8(&raw).map_err(|_| ApiError::bad_request("config is not UTF-8"))?;
            PlanConfig::from_json_str(text).map_err(ApiError::config)?
        }
    };
    let image = decode_image(&image_bytes)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_image", e.to_string()))?;
    let image_hash = image_hash(&image);
    let id = enqueue(
        &state,
        Job {
            state: JobState::Queued,
            parent: None,
            config,
            image: Arc::new(image),
            image_hash,
            result: None,
            error: None,
            timings: Timings::default(),
            features_reused: false,
        },
    );
    Ok(accepted(id))
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    state
        .with_job(&id, |job| {
            let result = job.result.as_ref().map(|r| {
                json!({
                    "image": format!("/api/jobs/{id}/result.png"),
                    "strokes": format!("/api/jobs/{id}/strokes"),
                    "report": r.report,
                })
            });
            Json(json!({
                "id": id,
                "state": job.state,
                "parent": job.parent,
                "config": job.config,
                "result": result,
                "error": job.error,
                "timings": job.timings,
                "features_reused": job.features_reused,
            }))
        })
        .ok_or_else(|| ApiError::not_found(&id))
}

fn finished(state: &AppState, id: &str) -> ApiResult<Arc<JobResult>> {
    let outcome = state.with_job(id, |job| match (job.state, &job.result) {
        (JobState::Done, Some(r)) => Ok(r.clone()),
        (JobState::Failed, _) => Err(ApiError::new(
            StatusCode::CONFLICT,
            "job_failed",
            job.error.clone().unwrap_or_default(),
        )),
        _ => Err(ApiError::new(StatusCode::CONFLICT, "not_ready", "job has not finished")),
    });
    outcome.ok_or_else(|| ApiError::not_found(id))?
}

async fn get_result(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let r = finished(&state, &id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], r.png.clone()).into_response())
}

async fn get_strokes(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let r = finished(&state, &id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], r.plan_json.clone()).into_response())
}

async fn replan(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let body = body.map_err(|e| ApiError::from_body_status(e.status(), e.body_text()))?;
    let patch: Value = if body.iter().all(u8::is_ascii_whitespace) {
        json!({})
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("patch is not JSON: {e}")))?
    };
    let parent = state
        .with_job(&id, |job| (job.config.clone(), job.image.clone(), job.image_hash))
        .ok_or_else(|| ApiError::not_found(&id))?;
    let (base, image, image_hash) = parent;
    let config = base.with_patch(&patch).map_err(ApiError::config)?;
    let new_id = enqueue(
        &state,
        Job {
            state: JobState::Queued,
            parent: Some(id),
            config,
            image,
            image_hash,
            result: None,
            error: None,
            timings: Timings::default(),
            features_reused: false,
        },
    );
    Ok(accepted(new_id))
}

async fn delete_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    match state.jobs.lock().expect("job table poisoned").pop(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(&id)),
    }
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn reject_oversized(request: Request, next: Next) -> Response {
    let declared = request
        .headers()
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    if declared.is_some_and(|n| n > MAX_BODY_BYTES as u64) {
        return ApiError::too_large().into_response();
    }
    next.run(request).await
}

/// Builds the service. Jobs are spawned on the ambient tokio runtime.
pub fn router(options: ServiceOptions) -> Router {
    let state = Arc::new(AppState {
        jobs: Mutex::new(LruCache::new(NonZeroUsize::new(JOB_CAPACITY).expect("nonzero"))),
        features: Mutex::new(LruCache::new(NonZeroUsize::new(FEATURE_CACHE_CAPACITY).expect("nonzero"))),
        permits: Arc::new(Semaphore::new(options.workers.max(1))),
    });
    let origin = match options.cors_origin {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/jobs", post(create_job))
        .route("/api/jobs/{id}", get(get_job).delete(delete_job))
        .route("/api/jobs/{id}/result.png", get(get_result))
        .route("/api/jobs/{id}/strokes", get(get_strokes))
        .route("/api/jobs/{id}/replan", post(replan))
        .fallback(fallback)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(middleware::from_fn(reject_oversized))
        .layer(cors)
        .with_state(state)
}

/// Serves until the process receives Ctrl-C.
pub async fn serve(listener: TcpListener, options: ServiceOptions) -> std::io::Result<()> {
    axum::serve(listener, router(options))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
