//! Websocket service around a [`SessionCore`].
//!
//! The training loop owns a dedicated thread. Clients reach it through a
//! command channel and receive round messages from a bounded broadcast
//! channel; a client that falls behind skips the oldest messages.

use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::sync::{broadcast, oneshot};
use toot_core::engine::RunLog;

use crate::protocol::{ClientMessage, ServerMessage};
use crate::session::{SessionCore, SessionError};

pub const LISTEN_ENV: &str = "TOOT_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8765";
pub const SCHEMA: &str = include_str!("../../../docs/protocol.schema.json");

pub fn listen_addr() -> String {
    std::env::var(LISTEN_ENV).unwrap_or_else(|_| DEFAULT_LISTEN.to_string())
}

enum Command {
    Hello(oneshot::Sender<ServerMessage>),
    Client(ClientMessage, oneshot::Sender<ServerMessage>),
    Shutdown,
}

#[derive(Debug, Clone)]
pub struct LoopConfig {
    /// Target rounds per second.
    pub fps: f64,
    /// Messages a slow client may lag before it starts losing the oldest.
    pub broadcast_capacity: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            fps: 6.0,
            broadcast_capacity: 32,
        }
    }
}

/// Running session loop. Dropping the handle without [`SessionHandle::shutdown`]
/// leaves the loop to stop once every sender is gone.
pub struct SessionHandle {
    session: Arc<str>,
    commands: mpsc::Sender<Command>,
    broadcast: broadcast::Sender<Arc<str>>,
    thread: Option<JoinHandle<Result<RunLog, SessionError>>>,
}

#[derive(Clone)]
struct AppState {
    session: Arc<str>,
    commands: mpsc::Sender<Command>,
    broadcast: broadcast::Sender<Arc<str>>,
}

fn handle_command(core: &mut SessionCore, cmd: Command) {
    match cmd {
        Command::Hello(reply) => {
            let _ = reply.send(core.hello());
        }
        Command::Client(msg, reply) => {
            let session = match &msg {
                ClientMessage::Click { session, .. } | ClientMessage::Control { session, .. } => session.clone(),
            };
            let answer = if session.as_deref().is_some_and(|s| s != core.id()) {
                ServerMessage::error(core.id(), "unknown session", None)
            } else {
                match msg {
                    ClientMessage::Click { ordinal, x, y, .. } => core.handle_click(ordinal, x, y),
                    ClientMessage::Control { body, .. } => core.handle_control(body),
                }
            };
            let _ = reply.send(answer);
        }
        Command::Shutdown => {}
    }
}

fn run_loop(
    mut core: SessionCore,
    cfg: LoopConfig,
    commands: mpsc::Receiver<Command>,
    out: broadcast::Sender<Arc<str>>,
) -> Result<RunLog, SessionError> {
    let period = Duration::from_secs_f64(1.0 / cfg.fps);
    let mut next = Instant::now();
    loop {
        let now = Instant::now();
        if !core.ended() && now >= next {
            match core.tick() {
                Ok(Some(tick)) => {
                    for m in tick.messages {
                        let _ = out.send(Arc::from(m.to_json()));
                    }
                }
                Ok(None) => {
                    log::info!("frame source exhausted after {} rounds", core.ordinal());
                    let _ = out.send(Arc::from(core.end_message().to_json()));
                }
                Err(e) => {
                    log::error!("session stopped: {e}");
                    let _ = out.send(Arc::from(ServerMessage::error(core.id(), e.to_string(), None).to_json()));
                    core.end()?;
                    let _ = out.send(Arc::from(core.end_message().to_json()));
                }
            }
            next += period;
            if next < now {
                next = now + period;
            }
            continue;
        }
        let wait = if core.ended() {
            Duration::from_millis(250)
        } else {
            next - now
        };
        match commands.recv_timeout(wait) {
            Ok(Command::Shutdown) | Err(mpsc::RecvTimeoutError::Disconnected) => break,
            Ok(cmd) => handle_command(&mut core, cmd),
            Err(mpsc::RecvTimeoutError::Timeout) => {}
        }
    }
    core.end()
}

impl SessionHandle {
    pub fn spawn(core: SessionCore, cfg: LoopConfig) -> Self {
        assert!(cfg.fps > 0.0 && cfg.fps.is_finite(), "fps must be positive");
        let session: Arc<str> = Arc::from(core.id());
        let (commands, rx) = mpsc::channel();
        let (broadcast, _) = broadcast::channel(cfg.broadcast_capacity.max(1));
        let out = broadcast.clone();
        let thread = std::thread::Builder::new()
            .name("session-loop".into())
            .spawn(move || run_loop(core, cfg, rx, out))
            .expect("spawning the session thread");
        Self {
            session,
            commands,
            broadcast,
            thread: Some(thread),
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.broadcast.subscribe()
    }

    pub fn router(&self) -> Router {
        let state = AppState {
            session: self.session.clone(),
            commands: self.commands.clone(),
            broadcast: self.broadcast.clone(),
        };
        Router::new()
            .route("/ws", get(ws_handler))
            .route("/protocol.schema.json", get(|| async { ([("content-type", "application/json")], SCHEMA) }))
            .with_state(state)
    }

    /// Stops the loop and returns the finished run log.
    pub fn shutdown(mut self) -> Result<RunLog, SessionError> {
        let _ = self.commands.send(Command::Shutdown);
        self.thread
            .take()
            .expect("joined once")
            .join()
            .unwrap_or_else(|_| Err(SessionError::Source("session thread panicked".into())))
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn ask(state: &AppState, make: impl FnOnce(oneshot::Sender<ServerMessage>) -> Command) -> Option<ServerMessage> {
    let (tx, rx) = oneshot::channel();
    state.commands.send(make(tx)).ok()?;
    rx.await.ok()
}

async fn client(socket: WebSocket, state: AppState) {
    let mut frames = state.broadcast.subscribe();
    let (mut sink, mut stream) = socket.split();
    let Some(hello) = ask(&state, Command::Hello).await else {
        return;
    };
    if sink.send(Message::Text(hello.to_json().into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            m = frames.recv() => match m {
                Ok(text) => {
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("client lagging, dropped {n} messages"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = stream.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match serde_json::from_str::<ClientMessage>(text.as_str()) {
                    Ok(msg) => ask(&state, |tx| Command::Client(msg, tx)).await,
                    Err(e) => Some(ServerMessage::error(&state.session, format!("malformed message: {e}"), None)),
                };
                let Some(reply) = reply else { break };
                if sink.send(Message::Text(reply.to_json().into())).await.is_err() {
                    break;
                }
            }
        }
    }
}

/// Serves `handle` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    handle: &SessionHandle,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, handle.router())
        .with_graceful_shutdown(shutdown)
        .await
}
