//! HTTP service for the operator console.
//!
//! | route          | method | body                                         |
//! |----------------|--------|----------------------------------------------|
//! | `/pipelines`   | GET    |                                              |
//! | `/infer`       | POST   | multipart `audio`, `pipeline`, `threshold`, `k`, `step`, `dispatch` |
//! | `/interpret`   | POST   | JSON `{"text": .., "step": .., "dispatch": ..}` |
//! | `/enroll`      | POST   | multipart `name`, one or more `audio`, `action` |
//! | `/command`     | POST   | JSON `{"command": "takeoff"}`                |
//! | `/state`       | GET    |                                              |
//! | `/events`      | GET    | server-sent events                           |
//!
//! Errors are JSON `{"error": ..}` with a 4xx status for bad requests and a
//! 5xx status when an engine fails or a model is missing.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::broadcast;
use tokio::task::JoinHandle;
use tower_http::cors::CorsLayer;
use voxpilot_core::audio::Waveform;
use voxpilot_core::engines::Engines;
use voxpilot_core::pipelines::direct::run_pipeline2;
use voxpilot_core::pipelines::siamese::{enroll, run_pipeline3, KnnConfig};
use voxpilot_core::pipelines::stt::interpret_text;
use voxpilot_core::pipelines::{PipelineDecision, PipelineId};
use voxpilot_core::{CommandLabel, DecisionLabel};

use crate::dispatch::{check_step, dispatch, Action, Dispatch, DEFAULT_STEP_CM};
use crate::error::{Error, Result};
use crate::sim::{DroneState, Reply, Simulator};

pub const DEFAULT_HTTP_ADDR: &str = "127.0.0.1:8080";
const BODY_LIMIT: usize = 32 * 1024 * 1024;

/// One record on the event stream.
#[derive(Debug, Clone, Serialize)]
pub struct Event {
    pub seq: u64,
    /// `infer`, `interpret`, `enroll` or `command`.
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispatched: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reply: Option<Reply>,
    pub state: DroneState,
}

#[derive(Debug)]
pub struct Service {
    engines: RwLock<Engines>,
    sim: Arc<Simulator>,
    custom: RwLock<BTreeMap<String, Action>>,
    step_cm: u32,
    events: broadcast::Sender<Event>,
    history: Mutex<Vec<Event>>,
}

impl Service {
    pub fn new(engines: Engines, sim: Arc<Simulator>) -> Self {
        let (events, _) = broadcast::channel(256);
        Self {
            engines: RwLock::new(engines),
            sim,
            custom: RwLock::new(BTreeMap::new()),
            step_cm: DEFAULT_STEP_CM,
            events,
            history: Mutex::new(Vec::new()),
        }
    }

    pub fn with_step(mut self, step_cm: u32) -> Result<Self> {
        self.step_cm = check_step(step_cm)?;
        Ok(self)
    }

    pub fn simulator(&self) -> &Arc<Simulator> {
        &self.sim
    }

    /// Every event published so far, in order.
    pub fn history(&self) -> Vec<Event> {
        self.history.lock().expect("history lock").clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Event> {
        self.events.subscribe()
    }

    fn publish(&self, mut event: Event) -> Event {
        let mut history = self.history.lock().expect("history lock");
        event.seq = history.len() as u64;
        history.push(event.clone());
        let _ = self.events.send(event.clone());
        event
    }

    fn act(&self, label: &DecisionLabel, step: u32, send: bool) -> Result<(Dispatch, Option<Reply>, DroneState)> {
        let d = dispatch(label, step, &self.custom.read().expect("mapping lock"))?;
        match d.command().filter(|_| send) {
            Some(cmd) => {
                let (reply, state) = self.sim.apply(&cmd.to_string());
                Ok((d, Some(reply), state))
            }
            None => Ok((d, None, self.sim.state())),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl From<voxpilot_core::Error> for ApiError {
    fn from(e: voxpilot_core::Error) -> Self {
        use voxpilot_core::Error as E;
        let status = match &e {
            E::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            E::InputTooShort { .. }
            | E::UnsupportedAudio(_)
            | E::InvalidArgument(_)
            | E::Config { .. }
            | E::Format { .. }
            | E::LabelOutOfRange { .. } => StatusCode::BAD_REQUEST,
            E::EmptyStore => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(c) => c.into(),
            Error::Protocol(_) | Error::Step(_) => Self::bad_request(e.to_string()),
            other => Self {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                message: other.to_string(),
            },
        }
    }
}

impl From<axum::extract::multipart::MultipartError> for ApiError {
    fn from(e: axum::extract::multipart::MultipartError) -> Self {
        Self {
            status: e.status(),
            message: e.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/pipelines", get(pipelines))
        .route("/infer", post(infer))
        .route("/interpret", post(interpret))
        .route("/enroll", post(enroll_command))
        .route("/command", post(command))
        .route("/state", get(state))
        .route("/events", get(events))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(CorsLayer::permissive())
        .with_state(service)
}

#[derive(Debug)]
pub struct ApiServer {
    pub local_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

impl ApiServer {
    /// Resolves when the server stops.
    pub async fn wait(mut self) {
        let _ = (&mut self.task).await;
    }
}

pub async fn serve_api(service: Arc<Service>, addr: &str) -> Result<ApiServer> {
    let listener = TcpListener::bind(addr).await.map_err(|source| Error::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let local_addr = listener.local_addr()?;
    let app = router(service);
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("http server stopped: {e}");
        }
    });
    Ok(ApiServer { local_addr, task })
}

async fn pipelines(State(svc): State<Arc<Service>>) -> Json<Value> {
    let engines = svc.engines.read().expect("engines lock");
    let list: Vec<Value> = PipelineId::ALL
        .iter()
        .map(|&id| {
            json!({
                "id": id,
                "description": id.description(),
                "available": engines.available(id),
            })
        })
        .collect();
    let labels = engines.store.as_ref().map(|s| s.labels()).unwrap_or_default();
    Json(json!({ "pipelines": list, "labels": labels }))
}

async fn field_text(field: axum::extract::multipart::Field<'_>) -> ApiResult<String> {
    Ok(field.text().await?.trim().to_string())
}

fn parse_field<T: std::str::FromStr>(name: &str, text: &str) -> ApiResult<T> {
    text.parse()
        .map_err(|_| ApiError::bad_request(format!("invalid `{name}`: `{text}`")))
}

fn parse_bool(name: &str, text: &str) -> ApiResult<bool> {
    match text {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ApiError::bad_request(format!("invalid `{name}`: `{text}`"))),
    }
}

fn decode_audio(bytes: &[u8]) -> ApiResult<Waveform> {
    Waveform::from_wav_bytes(bytes).map_err(ApiError::from)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: format!("worker failed: {e}"),
    })?
}

#[derive(Debug)]
struct InferRequest {
    audio: Waveform,
    pipeline: PipelineId,
    threshold: Option<f64>,
    k: Option<usize>,
    step: Option<u32>,
    dispatch: bool,
}

async fn read_infer(mut form: Multipart) -> ApiResult<InferRequest> {
    let (mut audio, mut pipeline) = (None, None);
    let (mut threshold, mut k, mut step, mut send) = (None, None, None, true);
    while let Some(field) = form.next_field().await? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "audio" => audio = Some(decode_audio(&field.bytes().await?)?),
            "pipeline" => {
                let text = field_text(field).await?;
                pipeline = Some(
                    text.parse::<PipelineId>()
                        .map_err(|_| ApiError::bad_request(format!("unknown pipeline `{text}`")))?,
                );
            }
            "threshold" => threshold = Some(parse_field("threshold", &field_text(field).await?)?),
            "k" => k = Some(parse_field("k", &field_text(field).await?)?),
            "step" => step = Some(parse_field("step", &field_text(field).await?)?),
            "dispatch" => send = parse_bool("dispatch", &field_text(field).await?)?,
            other => return Err(ApiError::bad_request(format!("unexpected field `{other}`"))),
        }
    }
    Ok(InferRequest {
        audio: audio.ok_or_else(|| ApiError::bad_request("missing `audio`"))?,
        pipeline: pipeline.ok_or_else(|| ApiError::bad_request("missing `pipeline`"))?,
        threshold,
        k,
        step,
        dispatch: send,
    })
}

fn run_tuned(engines: &Engines, req: &InferRequest) -> ApiResult<PipelineDecision> {
    let unavailable = || voxpilot_core::Error::Unavailable(req.pipeline.name().to_string());
    Ok(match (req.pipeline, req.threshold, req.k) {
        (PipelineId::P2, Some(tau), _) => {
            if !(0.0..=1.0).contains(&tau) {
                return Err(ApiError::bad_request(format!("threshold {tau} outside [0, 1]")));
            }
            let net = engines.classifier.as_ref().ok_or_else(unavailable)?;
            run_pipeline2(&req.audio, &engines.pre, net, tau)?
        }
        (PipelineId::P3, _, Some(k)) => {
            let cfg = KnnConfig { k, ..engines.knn };
            let enc = engines.encoder.as_ref().ok_or_else(unavailable)?;
            let store = engines.store.as_ref().ok_or_else(unavailable)?;
            run_pipeline3(&req.audio, &engines.pre, enc, store, &cfg)?
        }
        (id, _, _) => engines.run(id, &req.audio)?,
    })
}

fn respond(svc: &Service, kind: &'static str, decision: Option<Value>, label: &DecisionLabel, step: u32, send: bool) -> ApiResult<Value> {
    let (d, reply, state) = svc.act(label, step, send)?;
    let dispatched = d.command().map(|c| c.to_string());
    let event = svc.publish(Event {
        seq: 0,
        kind,
        decision: decision.clone(),
        direction: Some(label.name().to_string()),
        dispatched: dispatched.clone(),
        reply,
        state: state.clone(),
    });
    let reason = match &d {
        Dispatch::NoOp { reason } => Some(reason.clone()),
        Dispatch::Send(_) => None,
    };
    let mut out = json!({
        "seq": event.seq,
        "direction": label.name(),
        "dispatched": dispatched,
        "reply": reply,
        "state": state,
    });
    if let Some(decision) = decision {
        out["decision"] = decision;
    }
    if let Some(reason) = reason {
        out["reason"] = json!(reason);
    }
    Ok(out)
}

async fn infer(State(svc): State<Arc<Service>>, form: Multipart) -> ApiResult<Json<Value>> {
    let req = read_infer(form).await?;
    let step = req.step.unwrap_or(svc.step_cm);
    check_step(step)?;
    blocking(move || {
        let decision = run_tuned(&svc.engines.read().expect("engines lock"), &req)?;
        let value = serde_json::to_value(&decision).map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: e.to_string(),
        })?;
        respond(&svc, "infer", Some(value), &decision.label, step, req.dispatch)
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
struct InterpretRequest {
    text: String,
    step: Option<u32>,
    #[serde(default = "yes")]
    dispatch: bool,
}

fn yes() -> bool {
    true
}

async fn interpret(
    State(svc): State<Arc<Service>>,
    body: std::result::Result<Json<InterpretRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let step = check_step(req.step.unwrap_or(svc.step_cm))?;
    let direction = {
        let engines = svc.engines.read().expect("engines lock");
        interpret_text(&req.text, &engines.lexicon).direction
    };
    let label = DecisionLabel::Builtin(direction);
    let mut out = respond(&svc, "interpret", None, &label, step, req.dispatch)?;
    out["text"] = json!(req.text);
    Ok(Json(out))
}

async fn enroll_command(State(svc): State<Arc<Service>>, mut form: Multipart) -> ApiResult<Json<Value>> {
    let (mut name, mut action, mut samples) = (None, None, Vec::new());
    while let Some(field) = form.next_field().await? {
        let field_name = field.name().unwrap_or_default().to_string();
        match field_name.as_str() {
            "name" => name = Some(field_text(field).await?),
            "action" => {
                let text = field_text(field).await?;
                if !text.is_empty() {
                    action = Some(
                        text.parse::<Action>()
                            .map_err(|_| ApiError::bad_request(format!("unknown action `{text}`")))?,
                    );
                }
            }
            "audio" => samples.push(decode_audio(&field.bytes().await?)?),
            other => return Err(ApiError::bad_request(format!("unexpected field `{other}`"))),
        }
    }
    let name = name.ok_or_else(|| ApiError::bad_request("missing `name`"))?;
    if name.is_empty() {
        return Err(ApiError::bad_request("command name must not be empty"));
    }
    if name.parse::<CommandLabel>().is_ok() {
        return Err(ApiError::bad_request(format!("`{name}` is a built-in command")));
    }
    if samples.is_empty() {
        return Err(ApiError::bad_request("enrollment needs at least one `audio` sample"));
    }
    blocking(move || {
        let (added, total) = {
            let mut guard = svc.engines.write().expect("engines lock");
            let engines = &mut *guard;
            let encoder = engines
                .encoder
                .as_ref()
                .ok_or_else(|| voxpilot_core::Error::Unavailable(PipelineId::P3.name().into()))?;
            let store = engines
                .store
                .as_mut()
                .ok_or_else(|| voxpilot_core::Error::Unavailable(PipelineId::P3.name().into()))?;
            let added = enroll(store, &samples, &name, encoder, &engines.pre)?;
            let total = store.labels().get(name.as_str()).copied().unwrap_or(added);
            (added, total)
        };
        if let Some(a) = action {
            svc.custom.write().expect("mapping lock").insert(name.clone(), a);
        }
        let mapped = svc.custom.read().expect("mapping lock").get(&name).map(|a| a.to_string());
        let event = svc.publish(Event {
            seq: 0,
            kind: "enroll",
            decision: None,
            direction: Some(name.clone()),
            dispatched: None,
            reply: None,
            state: svc.sim.state(),
        });
        Ok(Json(json!({
            "seq": event.seq,
            "name": name,
            "added": added,
            "total": total,
            "action": mapped,
        })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct CommandRequest {
    command: String,
}

async fn command(
    State(svc): State<Arc<Service>>,
    body: std::result::Result<Json<CommandRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let text = req.command.trim().to_string();
    let (reply, state) = svc.sim.apply(&text);
    let event = svc.publish(Event {
        seq: 0,
        kind: "command",
        decision: None,
        direction: None,
        dispatched: Some(text.clone()),
        reply: Some(reply),
        state: state.clone(),
    });
    Ok(Json(json!({
        "seq": event.seq,
        "command": text,
        "reply": reply,
        "state": state,
    })))
}

async fn state(State(svc): State<Arc<Service>>) -> Json<DroneState> {
    Json(svc.sim.state())
}

fn receiver_stream<T: Clone + Send + 'static>(rx: broadcast::Receiver<T>) -> impl Stream<Item = T> + Send {
    stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(v) => return Some((v, rx)),
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("event stream lagged by {n}"),
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
}

/// Service events, plus raw simulator updates as `state` events so that
/// commands arriving over UDP also reach the console.
async fn events(State(svc): State<Arc<Service>>) -> Sse<impl Stream<Item = std::result::Result<SseEvent, Infallible>>> {
    let service = receiver_stream(svc.subscribe()).map(|e| {
        SseEvent::default()
            .event("decision")
            .json_data(&e)
            .unwrap_or_else(|_| SseEvent::default().comment("unserializable event"))
    });
    let sim = receiver_stream(svc.sim.subscribe()).map(|(command, reply, state)| {
        SseEvent::default()
            .event("state")
            .json_data(json!({ "command": command, "reply": reply, "state": state }))
            .unwrap_or_else(|_| SseEvent::default().comment("unserializable event"))
    });
    Sse::new(stream::select(service, sim).map(Ok)).keep_alive(KeepAlive::default())
}
