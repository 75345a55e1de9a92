//! WebSocket transport: one session and one tick loop per connection.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::serve::ListenerExt;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use telesync_core::{SimConfig, Vec3};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::time::MissedTickBehavior;

use crate::protocol::{parse_client, ClientMessage, ServerMessage};
use crate::session::Session;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub sim: SimConfig,
    pub tick: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self::from_sim(SimConfig::default())
    }
}

impl ServiceConfig {
    /// Ticks once per simulation step of wall-clock time.
    pub fn from_sim(sim: SimConfig) -> Self {
        Self {
            tick: Duration::from_secs_f64(sim.dt),
            sim,
        }
    }
}

#[derive(Clone)]
struct AppState {
    cfg: Arc<ServiceConfig>,
    ids: Arc<AtomicU64>,
}

pub fn router(cfg: ServiceConfig) -> Router {
    let state = AppState {
        cfg: Arc::new(cfg),
        ids: Arc::new(AtomicU64::new(1)),
    };
    Router::new()
        .route("/ws", get(upgrade))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, cfg: ServiceConfig) -> std::io::Result<()> {
    let listener = listener.tap_io(|tcp| {
        let _ = tcp.set_nodelay(true);
    });
    axum::serve(listener, router(cfg)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (in_tx, in_rx) = mpsc::channel::<String>(256);
    let (out_tx, mut out_rx) = mpsc::channel::<ServerMessage>(1024);
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            let text = match msg {
                Message::Text(t) => t.to_string(),
                Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
                Message::Close(_) => break,
                _ => continue,
            };
            if in_tx.send(text).await.is_err() {
                break;
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            if sink.send(Message::Text(m.to_json().into())).await.is_err() {
                break;
            }
        }
    });
    session_loop(in_rx, out_tx, &state.cfg, &state.ids).await;
    reader.abort();
    let _ = writer.await;
}

/// Owns the session for one client. Runs until the inbound queue closes or
/// the outbound queue is dropped.
pub async fn session_loop(
    mut inbound: mpsc::Receiver<String>,
    outbound: mpsc::Sender<ServerMessage>,
    cfg: &ServiceConfig,
    ids: &AtomicU64,
) {
    let mut interval = tokio::time::interval(cfg.tick);
    interval.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut session: Option<Session> = None;
    loop {
        let reply = tokio::select! {
            _ = interval.tick() => match session.as_mut().map(Session::tick) {
                Some(Ok(Some(frame))) => Some(ServerMessage::Telemetry(frame)),
                Some(Err(e)) => {
                    session = None;
                    Some(ServerMessage::error(format!("session stopped: {e}")))
                }
                _ => None,
            },
            msg = inbound.recv() => match msg {
                None => break,
                Some(text) => Some(handle(&text, &mut session, cfg, ids)),
            },
        };
        if let Some(r) = reply {
            if outbound.send(r).await.is_err() {
                break;
            }
        }
    }
}

fn handle(text: &str, session: &mut Option<Session>, cfg: &ServiceConfig, ids: &AtomicU64) -> ServerMessage {
    let msg = match parse_client(text) {
        Ok(m) => m,
        Err(e) => return ServerMessage::error(e),
    };
    if let ClientMessage::Configure(c) = &msg {
        let id = ids.fetch_add(1, Ordering::SeqCst);
        return match Session::configure(id, c, &cfg.sim) {
            Ok(s) => {
                *session = Some(s);
                ServerMessage::Ack {
                    of: "configure".into(),
                    session: Some(id),
                    target: None,
                }
            }
            Err(e) => ServerMessage::error(format!("configure rejected: {e}")),
        };
    }
    let Some(s) = session.as_mut() else {
        return ServerMessage::error("no session configured");
    };
    match msg {
        ClientMessage::Move { x, y, z } => {
            let used = s.handle_move(Vec3::new(x, y, z));
            ServerMessage::Ack {
                of: "move".into(),
                session: None,
                target: Some(used.to_array()),
            }
        }
        ClientMessage::Pause => {
            s.pause();
            ServerMessage::ack("pause")
        }
        ClientMessage::Resume => {
            s.resume();
            ServerMessage::ack("resume")
        }
        ClientMessage::Configure(_) => unreachable!(),
    }
}
