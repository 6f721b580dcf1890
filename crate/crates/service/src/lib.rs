//! HTTP/JSON front end for the verification engine.
//!
//! Batch operations (qualification, simulation, calibration) are stateless
//! POST endpoints. Live sessions are kept in memory: a caller starts one,
//! reads the pending challenge, and posts one response at a time until the
//! session reaches a verdict.
//!
//! Every error response has the body `{"error": {"kind", "message"}}`; kind
//! `config` maps to 400, `not_found` to 404, `conflict` to 409 and `runtime`
//! to 500.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gotcha_core::api::{self, ApiError, ErrorBody, ErrorKind, SessionView};
use gotcha_core::catalog::Catalog;
use gotcha_core::session::{self as protocol, SessionMachine};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

const BODY_LIMIT: usize = 32 * 1024 * 1024;
const DEFAULT_MAX_SESSIONS: usize = 10_000;

/// Live sessions, keyed by id.
pub struct AppState {
    sessions: Mutex<HashMap<String, SessionMachine>>,
    max_sessions: usize,
}

impl AppState {
    pub fn new(max_sessions: usize) -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            max_sessions,
        }
    }
}

impl Default for AppState {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_SESSIONS)
    }
}

struct Failure(ApiError);

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::Config => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Runtime => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.0 })).into_response()
    }
}

type Reply<T> = Result<Json<T>, Failure>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, Failure> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| Failure(ApiError::config(format!("invalid request body: {}", e.body_text()))))
}

/// Runs a CPU-bound handler off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, Failure>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure(ApiError::runtime(format!("worker failed: {e}"))))?
        .map_err(Failure)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn version() -> Json<api::VersionInfo> {
    Json(api::version())
}

async fn catalog() -> Json<Catalog> {
    Json(Catalog::bundled())
}

async fn validate_catalog(
    req: Result<Json<api::ValidateCatalogRequest>, JsonRejection>,
) -> Reply<api::ValidateCatalogResponse> {
    Ok(Json(api::validate_catalog(&body(req)?)?))
}

async fn benefit_score(
    req: Result<Json<api::BenefitScoreRequest>, JsonRejection>,
) -> Reply<api::BenefitScoreResponse> {
    Ok(Json(api::benefit(&body(req)?)?))
}

async fn grade(req: Result<Json<api::GradeRequest>, JsonRejection>) -> Reply<gotcha_core::grader::GradeResult> {
    Ok(Json(api::grade_trace(&body(req)?)?))
}

macro_rules! blocking_handler {
    ($name:ident, $req:ty, $resp:ty, $op:path) => {
        async fn $name(req: Result<Json<$req>, JsonRejection>) -> Reply<$resp> {
            let req = body(req)?;
            blocking(move || $op(&req)).await.map(Json)
        }
    };
}

blocking_handler!(qualify, api::QualifyRequest, api::QualifyResponse, api::qualify);
blocking_handler!(cascade, api::ProtocolSpec, api::CascadeResponse, api::cascade);
blocking_handler!(simulate, api::SimulateRequest, protocol::SessionRecord, api::simulate_session);
blocking_handler!(monte_carlo, api::MonteCarloRequest, gotcha_core::simulation::PopulationReport, api::monte_carlo);
blocking_handler!(calibrate, api::CalibrateRequest, gotcha_core::simulation::Calibration, api::calibrate);

async fn start_session(
    State(state): State<Arc<AppState>>,
    req: Result<Json<api::StartSessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), Failure> {
    let req = body(req)?;
    let machine = blocking(move || api::start_session(&req)).await?;
    let id = uuid::Uuid::new_v4().to_string();
    let mut sessions = state.sessions.lock().expect("session table");
    if sessions.len() >= state.max_sessions {
        return Err(Failure(ApiError {
            kind: ErrorKind::Conflict,
            message: format!("too many live sessions (limit {})", state.max_sessions),
        }));
    }
    let view = SessionView::of(&id, &machine);
    tracing::info!(session = %id, participant = %view.participant_id, "session started");
    sessions.insert(id, machine);
    Ok((StatusCode::CREATED, Json(view)))
}

fn missing(id: &str) -> Failure {
    Failure(ApiError::not_found(format!("no session `{id}`")))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Reply<SessionView> {
    let sessions = state.sessions.lock().expect("session table");
    let machine = sessions.get(&id).ok_or_else(|| missing(&id))?;
    Ok(Json(SessionView::of(&id, machine)))
}

async fn session_record(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Reply<protocol::SessionRecord> {
    let sessions = state.sessions.lock().expect("session table");
    let machine = sessions.get(&id).ok_or_else(|| missing(&id))?;
    Ok(Json(machine.record()))
}

async fn submit_response(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    req: Result<Json<protocol::Response>, JsonRejection>,
) -> Reply<protocol::StepOutcome> {
    let response = body(req)?;
    let mut sessions = state.sessions.lock().expect("session table");
    let machine = sessions.get_mut(&id).ok_or_else(|| missing(&id))?;
    let outcome = machine.submit(response).map_err(ApiError::from)?;
    if let Some(verdict) = outcome.verdict {
        tracing::info!(session = %id, ?verdict, reason = ?outcome.fail_reason, "session finished");
    }
    Ok(Json(outcome))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, Failure> {
    let mut sessions = state.sessions.lock().expect("session table");
    sessions.remove(&id).ok_or_else(|| missing(&id))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn not_found() -> Failure {
    Failure(ApiError::not_found("no such endpoint"))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/version", get(version))
        .route("/v1/catalog", get(catalog))
        .route("/v1/catalog/validate", post(validate_catalog))
        .route("/v1/benefit-score", post(benefit_score))
        .route("/v1/qualify", post(qualify))
        .route("/v1/cascade", post(cascade))
        .route("/v1/grade", post(grade))
        .route("/v1/simulate", post(simulate))
        .route("/v1/montecarlo", post(monte_carlo))
        .route("/v1/calibrate", post(calibrate))
        .route("/v1/sessions", post(start_session))
        .route("/v1/sessions/{id}", get(get_session).delete(delete_session))
        .route("/v1/sessions/{id}/responses", post(submit_response))
        .route("/v1/sessions/{id}/record", get(session_record))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(AppState::default()))).await
}

/// Binds `addr` and serves in a background task. Port 0 picks a free port;
/// the bound address is returned.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener))))
}
