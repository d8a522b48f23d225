//! HTTP API over annotation sessions.
//!
//! | method | path | result |
//! |---|---|---|
//! | POST | `/sessions` | multipart `image`, `superpixels?`, `features?`, `probmap?`, `config?` → 201 `{id}` |
//! | GET | `/sessions/{id}` | status, round count, last error |
//! | DELETE | `/sessions/{id}` | 204 |
//! | POST | `/sessions/{id}/scribbles` | scribble JSON → round result (202 in async mode) |
//! | GET | `/sessions/{id}/segmentation?round=r` | round result, latest when `round` is omitted |
//! | GET | `/sessions/{id}/rounds/{r}/{file}` | `class.png`, `instance.png`, `panoptic.png`, `overlay.png`, `superpixels.png`, `scribbles.json`, `report.json` |

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::raster;
use crate::scribble::{PolicyReport, ScribbleSet};
use crate::session::{RoundResult, Session, SessionConfig, SessionError, SessionInputs};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub idle_timeout: Duration,
    /// Request body cap in bytes.
    pub max_body: usize,
    /// Answer scribble posts with 202 and solve in the background.
    pub asynchronous: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            idle_timeout: Duration::from_secs(30 * 60),
            max_body: 32 * 1024 * 1024,
            asynchronous: false,
        }
    }
}

/// Encoded outputs of one finished round. Never modified after creation.
struct Artifacts {
    class_png: Bytes,
    instance_png: Bytes,
    panoptic_png: Bytes,
    overlay_png: Bytes,
    superpixels_png: Bytes,
    scribbles_json: Bytes,
    report_json: Bytes,
    report: serde_json::Value,
}

impl Artifacts {
    fn new(r: &RoundResult, image: &raster::ImagePlane) -> Self {
        let report = serde_json::to_value(&r.report).expect("report serializes");
        Self {
            class_png: r.class_png().into(),
            instance_png: r.instance_png().into(),
            panoptic_png: r.panoptic_png().into(),
            overlay_png: crate::session::overlay_png(image, &r.rendered).into(),
            superpixels_png: r.superpixels.to_png().into(),
            scribbles_json: r.scribbles.to_json().into(),
            report_json: r.report.to_json().into(),
            report,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Idle,
    Running,
    Failed,
}

struct Slot {
    id: String,
    created_at: u64,
    session: Mutex<Session>,
    busy: AtomicBool,
    last_used: Mutex<Instant>,
    rounds: RwLock<Vec<Arc<Artifacts>>>,
    last_error: Mutex<Option<serde_json::Value>>,
}

impl Slot {
    fn touch(&self) {
        *self.last_used.lock().expect("lock") = Instant::now();
    }
}

/// Clears the busy flag however the solve ends.
struct BusyGuard(Arc<Slot>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.touch();
        self.0.busy.store(false, Ordering::Release);
    }
}

pub struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    fn get(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        let slot = self
            .sessions
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))?;
        slot.touch();
        Ok(slot)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("lock").len()
    }

    /// Drops sessions idle for longer than the timeout. Returns how many.
    pub fn expire_idle(&self) -> usize {
        let timeout = self.config.idle_timeout;
        let mut map = self.sessions.write().expect("lock");
        let before = map.len();
        map.retain(|_, s| {
            s.busy.load(Ordering::Acquire) || s.last_used.lock().expect("lock").elapsed() < timeout
        });
        before - map.len()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn policy(report: PolicyReport) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": "scribbles violate the annotation policy", "violations": report }),
        }
    }

    fn from_session(e: SessionError) -> Self {
        match e {
            SessionError::Policy(r) => Self::policy(r),
            SessionError::Io { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            other => Self::new(StatusCode::UNPROCESSABLE_ENTITY, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body;
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_status).delete(delete_session))
        .route("/sessions/{id}/scribbles", post(post_scribbles))
        .route("/sessions/{id}/segmentation", get(segmentation))
        .route("/sessions/{id}/rounds/{round}/{file}", get(artifact))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Binds `config.bind` and serves until the process ends.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    serve_listener(listener, config).await
}

/// Serves on an already bound listener, sweeping idle sessions periodically.
pub async fn serve_listener(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config.clone());
    let sweeper = state.clone();
    let period = (config.idle_timeout / 4).clamp(Duration::from_millis(100), Duration::from_secs(30));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = sweeper.expire_idle();
            if n > 0 {
                log::info!("expired {n} idle session(s)");
            }
        }
    });
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    ApiError::new(e.status(), e.body_text())
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    mut form: Multipart,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let mut parts: HashMap<String, Bytes> = HashMap::new();
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(multipart_error)?;
        parts.insert(name, data);
    }
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, m);
    let invalid = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m);
    let image = parts.get("image").ok_or_else(|| bad("missing image part".into()))?;
    let image = raster::decode_image(image).map_err(|e| bad(e.to_string()))?;
    let config: SessionConfig = match parts.get("config") {
        Some(c) => serde_json::from_slice(c).map_err(|e| bad(format!("config: {e}")))?,
        None => SessionConfig::default(),
    };
    let superpixels = parts
        .get("superpixels")
        .map(|b| raster::decode_superpixels(b))
        .transpose()
        .map_err(|e| invalid(format!("superpixels: {e}")))?;
    let features = parts
        .get("features")
        .map(|b| raster::decode_field(b, false))
        .transpose()
        .map_err(|e| invalid(format!("features: {e}")))?;
    let probmap = parts
        .get("probmap")
        .map(|b| raster::decode_field(b, true))
        .transpose()
        .map_err(|e| invalid(format!("probmap: {e}")))?;
    let grid = config.superpixels;
    let inputs = SessionInputs::new(image, superpixels, features, probmap, grid)
        .map_err(|e| invalid(e.to_string()))?;
    let (feat, _) = inputs.graph_features();
    crate::rag::build_rag(&inputs.superpixels, feat).map_err(|e| invalid(e.to_string()))?;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let created_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let slot = Arc::new(Slot {
        id: id.clone(),
        created_at,
        session: Mutex::new(Session::new(inputs, config)),
        busy: AtomicBool::new(false),
        last_used: Mutex::new(Instant::now()),
        rounds: RwLock::new(Vec::new()),
        last_error: Mutex::new(None),
    });
    state.sessions.write().expect("lock").insert(id.clone(), slot);
    log::info!("created session {id}");
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

fn status_body(slot: &Slot) -> serde_json::Value {
    let state = if slot.busy.load(Ordering::Acquire) {
        JobState::Running
    } else if slot.last_error.lock().expect("lock").is_some() {
        JobState::Failed
    } else {
        JobState::Idle
    };
    json!({
        "id": slot.id,
        "created_at": slot.created_at,
        "rounds": slot.rounds.read().expect("lock").len(),
        "state": state,
        "last_error": slot.last_error.lock().expect("lock").clone(),
    })
}

async fn session_status(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let slot = state.get(&id)?;
    Ok(Json(status_body(&slot)))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> StatusCode {
    match state.sessions.write().expect("lock").remove(&id) {
        Some(_) => StatusCode::NO_CONTENT,
        None => StatusCode::NOT_FOUND,
    }
}

fn round_body(id: &str, round: usize, a: &Artifacts) -> serde_json::Value {
    let url = |f: &str| format!("/sessions/{id}/rounds/{round}/{f}");
    json!({
        "round": round,
        "class_png": url("class.png"),
        "instance_png": url("instance.png"),
        "panoptic_png": url("panoptic.png"),
        "overlay_png": url("overlay.png"),
        "superpixels_png": url("superpixels.png"),
        "scribbles_json": url("scribbles.json"),
        "report_json": url("report.json"),
        "report": a.report,
    })
}

/// Runs one round on a blocking thread and stores its artifacts.
fn solve(slot: &Slot, scribbles: ScribbleSet) -> Result<(usize, Arc<Artifacts>), ApiError> {
    let mut session = slot.session.lock().expect("lock");
    let result = session.run_round(Some(scribbles), None).map(|r| r.round);
    let outcome = match result {
        Ok(round) => {
            let r = session.round(round).expect("round just ran");
            let a = Arc::new(Artifacts::new(r, &session.inputs.image));
            slot.rounds.write().expect("lock").push(a.clone());
            Ok((round, a))
        }
        Err(e) => Err(ApiError::from_session(e)),
    };
    *slot.last_error.lock().expect("lock") = outcome.as_ref().err().map(|e| e.body.clone());
    outcome
}

async fn post_scribbles(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let slot = state.get(&id)?;
    let set = ScribbleSet::from_json(std::str::from_utf8(&body).unwrap_or_default())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    if slot
        .busy
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(ApiError::new(StatusCode::CONFLICT, "a round is already in flight"));
    }
    let guard = BusyGuard(slot.clone());
    {
        let session = slot.session.lock().expect("lock");
        let report = session.check_policy(&set);
        if !report.is_valid() {
            return Err(ApiError::policy(report));
        }
    }
    let next_round = slot.rounds.read().expect("lock").len();
    let worker = slot.clone();
    let job = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        solve(&worker, set)
    });
    if state.config.asynchronous {
        let body = json!({
            "round": next_round,
            "state": JobState::Running,
            "status_url": format!("/sessions/{id}"),
        });
        return Ok((StatusCode::ACCEPTED, Json(body)).into_response());
    }
    let (round, artifacts) = job
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(round_body(&id, round, &artifacts)).into_response())
}

#[derive(Debug, Deserialize)]
struct RoundQuery {
    round: Option<usize>,
}

fn round_artifacts(slot: &Slot, round: Option<usize>) -> Result<(usize, Arc<Artifacts>), ApiError> {
    let rounds = slot.rounds.read().expect("lock");
    let r = match round {
        Some(r) => r,
        None => rounds
            .len()
            .checked_sub(1)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no round has been run"))?,
    };
    let a = rounds
        .get(r)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("round {r} does not exist")))?;
    Ok((r, a))
}

async fn segmentation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<RoundQuery>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let slot = state.get(&id)?;
    let (r, a) = round_artifacts(&slot, q.round)?;
    Ok(Json(round_body(&id, r, &a)))
}

async fn artifact(
    State(state): State<Arc<AppState>>,
    Path((id, round, file)): Path<(String, usize, String)>,
) -> Result<Response, ApiError> {
    let slot = state.get(&id)?;
    let (_, a) = round_artifacts(&slot, Some(round))?;
    let (bytes, mime) = match file.as_str() {
        "class.png" => (&a.class_png, "image/png"),
        "instance.png" => (&a.instance_png, "image/png"),
        "panoptic.png" => (&a.panoptic_png, "image/png"),
        "overlay.png" => (&a.overlay_png, "image/png"),
        "superpixels.png" => (&a.superpixels_png, "image/png"),
        "scribbles.json" => (&a.scribbles_json, "application/json"),
        "report.json" => (&a.report_json, "application/json"),
        _ => return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no artifact {file}"))),
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes.clone()).into_response())
}
