//! HTTP control plane for the rearrangement engine.
//!
//! Reads are served from a snapshot behind a lock. Every mutating request
//! is handed to one worker thread that owns the [`Session`], so mutations
//! never interleave and blocking backend calls stay off the async runtime.

pub mod config;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{mpsc, Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rearrange_core::experience_store::Store;
use rearrange_core::scene::Scene;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

pub use config::{ServiceOptions, Settings, SettingsPatch};
pub use session::{InstructionRequest, Proposal, ProposalMethod, ServiceError, Session};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7788";

type Job = Box<dyn FnOnce(&mut Session) -> Result<Value, ServiceError> + Send>;
type Envelope = (Job, oneshot::Sender<Result<Value, ServiceError>>);

#[derive(Debug, Clone, Serialize)]
struct Snapshot {
    scene: Scene,
    settings: Settings,
}

#[derive(Clone)]
pub struct AppState {
    snapshot: Arc<RwLock<Snapshot>>,
    store: Arc<Store>,
    jobs: mpsc::Sender<Envelope>,
}

impl AppState {
    /// Opens the session and starts its worker thread. The worker stops
    /// once every clone of the state is dropped.
    pub fn start(options: ServiceOptions) -> Result<Self, ServiceError> {
        let mut session = Session::open(options)?;
        let snapshot = Arc::new(RwLock::new(Snapshot { scene: session.scene().clone(), settings: session.settings() }));
        let store = session.store();
        let (tx, rx) = mpsc::channel::<Envelope>();
        let shared = Arc::clone(&snapshot);
        std::thread::Builder::new()
            .name("session".into())
            .spawn(move || {
                for (job, reply) in rx {
                    let result = job(&mut session);
                    {
                        let mut snap = shared.write().expect("snapshot lock");
                        snap.scene = session.scene().clone();
                        snap.settings = session.settings();
                    }
                    let _ = reply.send(result);
                }
            })
            .expect("spawn session worker");
        Ok(Self { snapshot, store, jobs: tx })
    }

    async fn run<F>(&self, f: F) -> Result<Value, ServiceError>
    where
        F: FnOnce(&mut Session) -> Result<Value, ServiceError> + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        self.jobs.send((Box::new(f), tx)).map_err(|_| ServiceError::Unavailable)?;
        rx.await.map_err(|_| ServiceError::Unavailable)?
    }
}

struct ApiError(ServiceError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "stage": self.0.stage(), "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("response serializes")
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::BadRequest(format!("malformed body: {e}"))))
}

async fn get_scene(State(state): State<AppState>) -> Json<Value> {
    Json(to_value(&state.snapshot.read().expect("snapshot lock").scene))
}

async fn post_instruction(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let req: InstructionRequest = parse(&body)?;
    let out = state.run(move |s| s.propose(&req).map(to_value)).await.map_err(ApiError)?;
    Ok(Json(out))
}

async fn post_apply(State(state): State<AppState>) -> ApiResult {
    Ok(Json(state.run(|s| s.apply().map(to_value)).await.map_err(ApiError)?))
}

async fn post_reject(State(state): State<AppState>) -> ApiResult {
    Ok(Json(state.run(|s| Ok(json!({ "cleared": s.reject() }))).await.map_err(ApiError)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AcceptRequest {
    instruction: String,
}

async fn post_accept(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let req: AcceptRequest = parse(&body)?;
    Ok(Json(state.run(move |s| s.accept(&req.instruction).map(to_value)).await.map_err(ApiError)?))
}

async fn get_experiences(State(state): State<AppState>) -> Json<Value> {
    Json(to_value(session::summaries(&state.store)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResetRequest {
    scene_fixture: String,
}

async fn post_reset(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let req: ResetRequest = parse(&body)?;
    Ok(Json(state.run(move |s| s.reset(&req.scene_fixture).map(to_value)).await.map_err(ApiError)?))
}

async fn get_config(State(state): State<AppState>) -> Json<Value> {
    Json(to_value(state.snapshot.read().expect("snapshot lock").settings))
}

async fn patch_config(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let patch: SettingsPatch = parse(&body)?;
    Ok(Json(state.run(move |s| s.patch_settings(&patch).map(to_value)).await.map_err(ApiError)?))
}

/// API routes, plus the console's static files when `console` is set.
pub fn router(state: AppState, console: Option<PathBuf>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST, Method::PATCH])
        .allow_headers([header::CONTENT_TYPE]);
    let api = Router::new()
        .route("/scene", get(get_scene))
        .route("/instruction", post(post_instruction))
        .route("/apply", post(post_apply))
        .route("/reject", post(post_reject))
        .route("/experience/accept", post(post_accept))
        .route("/experiences", get(get_experiences))
        .route("/reset", post(post_reset))
        .route("/config", get(get_config).patch(patch_config))
        .with_state(state);
    let app = match console {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}

/// Binds `listen` and serves until the process ends.
pub async fn serve(options: ServiceOptions, listen: SocketAddr, console: Option<PathBuf>) -> std::io::Result<()> {
    let state = AppState::start(options).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(listen).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, console)).await
}
