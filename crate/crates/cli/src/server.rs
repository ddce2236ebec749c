//! HTTP session service for human play.
//!
//! A person opens a session on one suite episode, picks a frame each round
//! and finally gets a summary that replays the same seeded episode under the
//! baseline policies. Choice latency is measured on the server, from the
//! moment a state is served to the moment the next action arrives.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use framepick::episode::{EpisodeConfig, FrameIndex};
use framepick::eval::{auc, run_episode};
use framepick::hash::derive_seed;
use framepick::policies::Policy;
use framepick::qnet::QNetworkParams;
use framepick::sim::{Environment, ObservationMode, SimEnv};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

/// Random-baseline repeats in a session summary.
pub const RANDOM_REPEATS: usize = 5;

const STREAM_SESSION: u64 = 0x7365_7373;
const STREAM_RANDOM: u64 = 0x726e_6462;

pub struct Session {
    pub id: String,
    pub episode_index: usize,
    pub config: EpisodeConfig,
    pub env: SimEnv,
    pub mode: ObservationMode,
    pub actions: Vec<usize>,
    pub scores: Vec<f64>,
    pub choice_latencies_ms: Vec<f64>,
    pub created_at: SystemTime,
    served_at: Instant,
}

impl Session {
    fn view(&mut self) -> SessionView {
        self.served_at = Instant::now();
        let state = self.env.state();
        SessionView {
            session_id: self.id.clone(),
            episode_index: self.episode_index,
            mode: self.mode,
            n_frames: self.config.n_frames,
            horizon: self.config.horizon,
            done: self.env.is_done(),
            state: StateView {
                quality: self.env.observe_quality(self.mode).into_inner(),
                history: state.history.as_slice().to_vec(),
                round: state.round,
            },
            scores: self.scores.clone(),
        }
    }
}

pub struct AppState {
    suite: Vec<EpisodeConfig>,
    agent: Option<Arc<QNetworkParams>>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    nonce: AtomicU64,
    session_log: Option<PathBuf>,
}

impl AppState {
    pub fn new(
        suite: Vec<EpisodeConfig>,
        agent: Option<QNetworkParams>,
        session_log: Option<PathBuf>,
    ) -> Self {
        AppState {
            suite,
            agent: agent.map(Arc::new),
            sessions: Mutex::new(HashMap::new()),
            nonce: AtomicU64::new(0),
            session_log,
        }
    }

    pub fn session(&self, id: &str) -> Option<Arc<tokio::sync::Mutex<Session>>> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateView {
    /// Per-frame quality as seen in the session's mode.
    pub quality: Vec<f64>,
    pub history: Vec<u32>,
    pub round: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub episode_index: usize,
    pub mode: ObservationMode,
    pub n_frames: usize,
    pub horizon: u32,
    pub done: bool,
    pub state: StateView,
    /// Mean quality after each completed round.
    pub scores: Vec<f64>,
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub episode_index: usize,
    #[serde(default = "default_mode")]
    pub mode: ObservationMode,
}

fn default_mode() -> ObservationMode {
    ObservationMode::Wild
}

#[derive(Debug, Deserialize)]
pub struct Action {
    pub frame: usize,
    /// Round the client believes it is answering; a mismatch is a conflict.
    #[serde(default)]
    pub round: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Baselines {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub agent_auc: Option<f64>,
    pub worst_auc: f64,
    pub random_auc_mean: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub session_id: String,
    pub episode_index: usize,
    pub mode: ObservationMode,
    pub human_auc: f64,
    pub per_round_scores: Vec<f64>,
    pub actions: Vec<usize>,
    pub choice_latencies_ms: Vec<f64>,
    pub mean_choice_latency_ms: f64,
    pub baselines: Baselines,
    /// Per-round scores of each baseline, for plotting against the human curve.
    pub baseline_scores: HashMap<String, Vec<f64>>,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn err(status: StatusCode, msg: impl Into<String>) -> ApiError {
    ApiError(status, msg.into())
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        err(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<framepick::Error> for ApiError {
    fn from(e: framepick::Error) -> Self {
        err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/actions", post(post_action))
        .route("/sessions/{id}/summary", get(get_summary))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<Session>>> {
    state
        .session(id)
        .ok_or_else(|| err(StatusCode::NOT_FOUND, format!("no session {id}")))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let Json(req) = body?;
    let base = state.suite.get(req.episode_index).ok_or_else(|| {
        err(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!(
                "episode_index {} out of range (suite has {} episodes)",
                req.episode_index,
                state.suite.len()
            ),
        )
    })?;
    let nonce = state.nonce.fetch_add(1, Ordering::Relaxed);
    let mut config = base.clone();
    config.seed = derive_seed(base.seed, &[STREAM_SESSION, req.episode_index as u64, nonce]);
    let env = SimEnv::new(config.clone())?;
    let id = format!("{:032x}", rand::random::<u128>());
    let mut session = Session {
        id: id.clone(),
        episode_index: req.episode_index,
        config,
        env,
        mode: req.mode,
        actions: Vec::new(),
        scores: Vec::new(),
        choice_latencies_ms: Vec::new(),
        created_at: SystemTime::now(),
        served_at: Instant::now(),
    };
    let view = session.view();
    state
        .sessions
        .lock()
        .unwrap()
        .insert(id, Arc::new(tokio::sync::Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionView>> {
    let session = lookup(&state, &id)?;
    let mut s = session.lock().await;
    Ok(Json(s.view()))
}

async fn delete_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    match state.sessions.lock().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(err(StatusCode::NOT_FOUND, format!("no session {id}"))),
    }
}

async fn post_action(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<Action>, JsonRejection>,
) -> ApiResult<Json<SessionView>> {
    let session = lookup(&state, &id)?;
    let Json(action) = body?;
    let received = Instant::now();
    let mut s = session
        .try_lock()
        .map_err(|_| err(StatusCode::CONFLICT, "another action is in progress"))?;
    if s.env.is_done() {
        return Err(err(StatusCode::CONFLICT, "session is finished"));
    }
    if let Some(round) = action.round {
        if round != s.env.round() {
            return Err(err(
                StatusCode::CONFLICT,
                format!("stale round {round}; session is at round {}", s.env.round()),
            ));
        }
    }
    if action.frame >= s.config.n_frames {
        return Err(err(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("frame {} out of range [0, {})", action.frame, s.config.n_frames),
        ));
    }
    let latency = received.duration_since(s.served_at).as_secs_f64() * 1e3;
    s.env.step(FrameIndex(action.frame))?;
    let score = s.env.true_mean_quality();
    s.actions.push(action.frame);
    s.scores.push(score);
    s.choice_latencies_ms.push(latency);
    if s.env.is_done() {
        if let Some(path) = &state.session_log {
            append_log(path, &s)?;
        }
    }
    Ok(Json(s.view()))
}

fn append_log(path: &std::path::Path, s: &Session) -> ApiResult<()> {
    let record = json!({
        "session_id": s.id,
        "episode_index": s.episode_index,
        "seed": s.config.seed,
        "mode": s.mode,
        "actions": s.actions,
        "scores": s.scores,
        "human_auc": auc(&s.scores)?,
        "choice_latencies_ms": s.choice_latencies_ms,
        "created_at": s.created_at.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    });
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        writeln!(f, "{record}")
    };
    write().map_err(|e| {
        err(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("writing session log {}: {e}", path.display()),
        )
    })
}

fn replay(config: &EpisodeConfig, mut policy: Policy, mode: ObservationMode) -> ApiResult<Vec<f64>> {
    let mut env = SimEnv::new(config.clone())?;
    Ok(run_episode(&mut env, config, &mut policy, mode)?.scores)
}

async fn get_summary(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Summary>> {
    let session = lookup(&state, &id)?;
    let s = session.lock().await;
    if !s.env.is_done() {
        return Err(err(
            StatusCode::CONFLICT,
            format!("session is at round {} of {}", s.env.round(), s.config.horizon),
        ));
    }
    let mut baseline_scores = HashMap::new();
    let worst = match s.mode {
        ObservationMode::Oracle => Policy::WorstOracle,
        ObservationMode::Wild => Policy::WorstWild,
    };
    let worst_scores = replay(&s.config, worst, s.mode)?;
    let worst_auc = auc(&worst_scores)?;
    baseline_scores.insert("worst".to_string(), worst_scores);

    let mut random_aucs = Vec::with_capacity(RANDOM_REPEATS);
    for r in 0..RANDOM_REPEATS {
        let seed = derive_seed(s.config.seed, &[STREAM_RANDOM, r as u64]);
        random_aucs.push(auc(&replay(&s.config, Policy::random(seed), s.mode)?)?);
    }
    let random_auc_mean = random_aucs.iter().sum::<f64>() / random_aucs.len() as f64;

    let agent_auc = match &state.agent {
        Some(params) => {
            let scores = replay(&s.config, Policy::Agent(Some(params.clone())), s.mode)?;
            let a = auc(&scores)?;
            baseline_scores.insert("agent".to_string(), scores);
            Some(a)
        }
        None => None,
    };
    let n = s.choice_latencies_ms.len().max(1) as f64;
    Ok(Json(Summary {
        session_id: s.id.clone(),
        episode_index: s.episode_index,
        mode: s.mode,
        human_auc: auc(&s.scores)?,
        per_round_scores: s.scores.clone(),
        actions: s.actions.clone(),
        choice_latencies_ms: s.choice_latencies_ms.clone(),
        mean_choice_latency_ms: s.choice_latencies_ms.iter().sum::<f64>() / n,
        baselines: Baselines {
            agent_auc,
            worst_auc,
            random_auc_mean,
        },
        baseline_scores,
    }))
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(addr: &str, state: Arc<AppState>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
