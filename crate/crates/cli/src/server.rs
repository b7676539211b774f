//! HTTP control API. Handlers only read copies published by the pipeline and
//! send commands over its queue.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::mpsc::RecvTimeoutError;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::body::{Body, Bytes};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use proedit_core::camera::Camera;
use proedit_core::pipeline::{preview, Command, Event, RunHandle, RunMode, RunStatus, Snapshot, SnapshotMetrics};
use proedit_core::scheduler::Schedule;
use proedit_core::Error;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

const COMMAND_TIMEOUT: Duration = Duration::from_secs(10);
/// Re-planning the tail evaluates the difficulty oracle, which can take a while.
const ADJUST_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Clone)]
pub struct AppState {
    handle: Arc<RunHandle>,
    cameras: Arc<Vec<Camera>>,
}

impl AppState {
    pub fn new(handle: Arc<RunHandle>, cameras: Vec<Camera>) -> Self {
        Self {
            handle,
            cameras: Arc::new(cameras),
        }
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Rejected(_) => StatusCode::CONFLICT,
            Error::Invalid(_) => StatusCode::BAD_REQUEST,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq)]
pub struct ScheduleFlags {
    pub prepend_refine: bool,
    pub append_refine: bool,
    pub threshold_met: bool,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ScheduleView {
    pub ratios: Vec<f64>,
    pub difficulties: Vec<f64>,
    pub threshold: f64,
    pub flags: ScheduleFlags,
}

impl From<Schedule> for ScheduleView {
    fn from(s: Schedule) -> Self {
        Self {
            flags: ScheduleFlags {
                prepend_refine: s.prepend_refine,
                append_refine: s.append_refine,
                threshold_met: s.threshold_met,
            },
            ratios: s.ratios,
            difficulties: s.difficulties,
            threshold: s.threshold,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct SnapshotView {
    pub stage_index: usize,
    pub ratio: f64,
    pub metrics: SnapshotMetrics,
}

#[derive(Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum Action {
    Pause,
    Resume,
    SkipStage,
    StopAt,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ControlRequest {
    action: Action,
    stage: Option<usize>,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ThresholdRequest {
    threshold: f64,
}

#[derive(Deserialize, Debug)]
struct RenderQuery {
    snapshot: usize,
    view: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/schedule", get(schedule).post(adjust_schedule))
        .route("/api/snapshots", get(snapshots))
        .route("/api/render", get(render))
        .route("/api/events", get(events))
        .route("/api/control", axum::routing::post(control))
        .with_state(state)
}

async fn status(State(s): State<AppState>) -> Json<RunStatus> {
    Json(s.handle.status())
}

async fn schedule(State(s): State<AppState>) -> Result<Json<ScheduleView>, ApiError> {
    s.handle
        .schedule()
        .map(|sch| Json(sch.into()))
        .ok_or_else(|| ApiError(StatusCode::SERVICE_UNAVAILABLE, "schedule not available yet".into()))
}

async fn snapshots(State(s): State<AppState>) -> Json<Vec<SnapshotView>> {
    Json(
        s.handle
            .snapshots()
            .into_iter()
            .map(|sn| SnapshotView {
                stage_index: sn.stage_index,
                ratio: sn.ratio,
                metrics: sn.metrics,
            })
            .collect(),
    )
}

async fn render(State(s): State<AppState>, Query(q): Query<RenderQuery>) -> Result<Response, ApiError> {
    let snapshot: Snapshot = s
        .handle
        .snapshots()
        .into_iter()
        .find(|sn| sn.stage_index == q.snapshot)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no snapshot {}", q.snapshot)))?;
    let cam = s
        .cameras
        .get(q.view)
        .cloned()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown view id {}", q.view)))?;
    let png = tokio::task::spawn_blocking(move || preview(&snapshot, &cam).and_then(|img| img.to_png()))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

fn is_terminal(e: &Event) -> bool {
    matches!(e, Event::Finished { .. } | Event::Aborted { .. })
}

/// History first, then live events, one JSON object per line. The stream ends
/// after the run finishes or aborts.
async fn events(State(s): State<AppState>) -> Response {
    let (history, live) = s.handle.subscribe();
    let (tx, rx) = mpsc::unbounded_channel::<Event>();
    std::thread::spawn(move || {
        for e in history {
            let end = is_terminal(&e);
            if tx.send(e).is_err() || end {
                return;
            }
        }
        loop {
            match live.recv_timeout(Duration::from_millis(200)) {
                Ok(e) => {
                    let end = is_terminal(&e);
                    if tx.send(e).is_err() || end {
                        return;
                    }
                }
                Err(RecvTimeoutError::Timeout) if tx.is_closed() => return,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
        }
    });
    let stream = futures_util::stream::unfold(rx, |mut rx| async move {
        let e = rx.recv().await?;
        let mut line = serde_json::to_string(&e).expect("events serialize");
        line.push('\n');
        Some((Ok::<_, Infallible>(line), rx))
    });
    ([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(stream)).into_response()
}

async fn send(s: &AppState, command: Command, timeout: Duration) -> Result<RunStatus, ApiError> {
    let handle = s.handle.clone();
    tokio::task::spawn_blocking(move || handle.send(command, timeout))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn control(State(s): State<AppState>, body: Bytes) -> Result<Json<RunStatus>, ApiError> {
    let req: ControlRequest =
        serde_json::from_slice(&body).map_err(|e| bad_request(format!("malformed control request: {e}")))?;
    let command = match (req.action, req.stage) {
        (Action::Pause, None) => Command::Pause,
        (Action::Resume, None) => Command::Resume,
        (Action::SkipStage, None) => Command::SkipStage,
        (Action::StopAt, Some(k)) => Command::StopAt(k),
        (Action::StopAt, None) => return Err(bad_request("stop_at needs a stage")),
        (a, Some(_)) => return Err(bad_request(format!("{a:?} takes no stage"))),
    };
    Ok(Json(send(&s, command, COMMAND_TIMEOUT).await?))
}

async fn adjust_schedule(State(s): State<AppState>, body: Bytes) -> Result<Json<ScheduleView>, ApiError> {
    let req: ThresholdRequest =
        serde_json::from_slice(&body).map_err(|e| bad_request(format!("malformed schedule request: {e}")))?;
    if !(req.threshold > 0.0 && req.threshold.is_finite()) {
        return Err(bad_request(format!("threshold must be positive, got {}", req.threshold)));
    }
    let mode = s.handle.status().mode;
    if mode != RunMode::Paused {
        return Err(ApiError(
            StatusCode::CONFLICT,
            format!("pause the run before adjusting the schedule (mode is {mode:?})"),
        ));
    }
    send(&s, Command::Adjust(req.threshold), ADJUST_TIMEOUT).await?;
    schedule(State(s)).await
}

/// A server running on its own thread and runtime.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops on its own (in practice, until the process is killed).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` (use port 0 for an ephemeral port) and serves in the background.
pub fn spawn(addr: &str, state: AppState) -> anyhow::Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    listener.set_nonblocking(true)?;
    let bound = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state);
    let thread = std::thread::Builder::new().name("proedit-http".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("control API listener: {e}");
                    return;
                }
            };
            tokio::select! {
                res = axum::serve(listener, app) => {
                    if let Err(e) = res {
                        log::error!("control API stopped: {e}");
                    }
                }
                _ = rx => {}
            }
        });
        runtime.shutdown_timeout(Duration::from_millis(100));
    })?;
    Ok(ServerHandle {
        addr: bound,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
