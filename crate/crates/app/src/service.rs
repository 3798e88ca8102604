//! Telemetry and steering service.
//!
//! One simulation task owns the [`Controller`]. Network handlers only push
//! events onto an ordered queue and read published frames.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use bci_core::classify::{encode_class, DigitalCode};
use bci_core::control::{Controller, TelemetryFrame};
use bci_core::dataset::{load_dataset, split_half, MovementClass};
use bci_core::validate::predict;
use bci_core::BciError;
use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::config::PipelineConfig;
use crate::pipeline::{load_or_synthesize, train_pipeline, AtStage, Stage, StageError, TeePort, TrainedPipeline};

pub const RING_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Switch,
    Replay { dataset: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(TelemetryFrame),
    ReplayQueued { trials: usize, non_other: usize },
    Error { message: String },
}

impl ServerMessage {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("server message serializes");
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEvent {
    ManualSwitch,
    Code(DigitalCode),
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Directory of UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
    pub ring_capacity: Option<usize>,
}

#[derive(Clone)]
struct AppState {
    events: mpsc::UnboundedSender<SimEvent>,
    frames: broadcast::Sender<TelemetryFrame>,
    ring: Arc<Mutex<VecDeque<TelemetryFrame>>>,
    latest: Arc<Mutex<TelemetryFrame>>,
    replay: Arc<TrainedPipeline>,
}

pub struct ServiceHandle {
    local_addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    server: JoinHandle<()>,
    sim: JoinHandle<()>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.server).await;
        self.sim.abort();
    }

    /// Resolves when the HTTP server stops.
    pub async fn wait(mut self) {
        let _ = (&mut self.server).await;
        self.sim.abort();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

/// Trains the replay classifier on the configured data's training half.
pub fn train_replay_model(config: &PipelineConfig) -> Result<TrainedPipeline, StageError> {
    let dataset = load_or_synthesize(config)?;
    let (train, _) = split_half(&dataset, config.seed).at(Stage::Split)?;
    train_pipeline(config, &train, &config.features)
}

pub async fn start(
    config: PipelineConfig,
    bind: &str,
    options: ServeOptions,
) -> Result<ServiceHandle, ServeError> {
    let trained = {
        let config = config.clone();
        tokio::task::spawn_blocking(move || train_replay_model(&config))
            .await
            .expect("training task panicked")?
    };
    start_with_model(config, trained, bind, options).await
}

pub async fn start_with_model(
    config: PipelineConfig,
    trained: TrainedPipeline,
    bind: &str,
    options: ServeOptions,
) -> Result<ServiceHandle, ServeError> {
    config.validate().at(Stage::Config)?;
    let controller = Controller::new(config.tick_hz, config.car_speed_mps).at(Stage::Control)?;
    let port = TeePort::open(&config.port).at(Stage::Control)?;
    let listener = TcpListener::bind(bind).await.map_err(|source| ServeError::Bind {
        addr: bind.to_string(),
        source,
    })?;
    let local_addr = listener.local_addr().map_err(|source| ServeError::Bind {
        addr: bind.to_string(),
        source,
    })?;

    let (events_tx, events_rx) = mpsc::unbounded_channel();
    let (frames_tx, _) = broadcast::channel(256);
    let state = AppState {
        events: events_tx,
        frames: frames_tx,
        ring: Arc::new(Mutex::new(VecDeque::new())),
        latest: Arc::new(Mutex::new(controller.snapshot())),
        replay: Arc::new(trained),
    };
    let capacity = options.ring_capacity.unwrap_or(RING_CAPACITY).max(1);
    let period = Duration::from_secs_f64(1.0 / config.tick_hz);
    let sim = tokio::spawn(sim_loop(controller, port, events_rx, state.clone(), capacity, period));

    let mut app = Router::new()
        .route("/ws", get(ws_handler))
        .route("/state", get(state_handler))
        .route("/frames", get(frames_handler));
    if let Some(dir) = options.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let app = app.with_state(state);

    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            })
            .await;
    });
    Ok(ServiceHandle {
        local_addr,
        shutdown: Some(shutdown_tx),
        server,
        sim,
    })
}

async fn sim_loop(
    mut controller: Controller,
    mut port: TeePort,
    mut events: mpsc::UnboundedReceiver<SimEvent>,
    state: AppState,
    capacity: usize,
    period: Duration,
) {
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        interval.tick().await;
        let result = match events.try_recv().ok() {
            Some(SimEvent::ManualSwitch) => controller.step_pulse(true, DigitalCode::IDLE, &mut port),
            Some(SimEvent::Code(code)) => controller.step(code, &mut port),
            None => controller.step(DigitalCode::IDLE, &mut port),
        };
        let frame = match result {
            Ok(frame) => frame,
            Err(_) => break,
        };
        port.log.clear();
        {
            let mut ring = state.ring.lock().expect("ring lock");
            if ring.len() == capacity {
                ring.pop_front();
            }
            ring.push_back(frame.clone());
        }
        *state.latest.lock().expect("latest lock") = frame.clone();
        let _ = state.frames.send(frame);
    }
}

async fn state_handler(State(state): State<AppState>) -> Json<TelemetryFrame> {
    Json(state.latest.lock().expect("latest lock").clone())
}

async fn frames_handler(State(state): State<AppState>) -> Json<Vec<TelemetryFrame>> {
    Json(state.ring.lock().expect("ring lock").iter().cloned().collect())
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client_session(socket, state))
}

async fn client_session(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let mut frames = state.frames.subscribe();
    let (reply_tx, mut reply_rx) = mpsc::unbounded_channel::<ServerMessage>();

    let writer = tokio::spawn(async move {
        loop {
            let message = tokio::select! {
                reply = reply_rx.recv() => match reply {
                    Some(m) => m,
                    None => break,
                },
                frame = frames.recv() => match frame {
                    Ok(f) => ServerMessage::Frame(f),
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            };
            if sink.send(Message::Text(message.to_line().into())).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(message)) = stream.next().await {
        let text = match message {
            Message::Text(text) => text.to_string(),
            Message::Binary(bytes) => match String::from_utf8(bytes.to_vec()) {
                Ok(text) => text,
                Err(_) => {
                    let _ = reply_tx.send(error_message("binary message is not UTF-8"));
                    continue;
                }
            },
            Message::Close(_) => break,
            _ => continue,
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let reply = handle_line(line, &state).await;
            if let Some(reply) = reply {
                if reply_tx.send(reply).is_err() {
                    break;
                }
            }
        }
    }
    drop(reply_tx);
    writer.abort();
}

fn error_message(message: impl Into<String>) -> ServerMessage {
    ServerMessage::Error {
        message: message.into(),
    }
}

async fn handle_line(line: &str, state: &AppState) -> Option<ServerMessage> {
    let message: ClientMessage = match serde_json::from_str(line) {
        Ok(m) => m,
        Err(e) => return Some(error_message(format!("malformed message: {e}"))),
    };
    match message {
        ClientMessage::Switch => {
            let _ = state.events.send(SimEvent::ManualSwitch);
            None
        }
        ClientMessage::Replay { dataset } => {
            let trained = Arc::clone(&state.replay);
            let codes = tokio::task::spawn_blocking(move || replay_codes(&trained, &dataset))
                .await
                .expect("replay task panicked");
            match codes {
                Ok(classes) => {
                    let non_other = classes.iter().filter(|c| **c != MovementClass::Other).count();
                    for class in &classes {
                        let _ = state.events.send(SimEvent::Code(encode_class(*class)));
                    }
                    Some(ServerMessage::ReplayQueued {
                        trials: classes.len(),
                        non_other,
                    })
                }
                Err(e) => Some(error_message(format!("replay failed: {e}"))),
            }
        }
    }
}

/// Classifies every trial of the dataset at `dir`, in file order.
pub fn replay_codes(trained: &TrainedPipeline, dir: &std::path::Path) -> Result<Vec<MovementClass>, BciError> {
    let dataset = load_dataset(dir)?;
    dataset
        .trials
        .iter()
        .map(|t| predict(&trained.model, &trained.spec, t).map(|(class, _)| class))
        .collect()
}
