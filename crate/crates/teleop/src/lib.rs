//! Live teleoperation sessions served over WebSocket.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, ControllerKind, ServerMessage, SessionConfig, TelemetryFrame};
pub use server::{router, serve, ServiceConfig};
pub use session::{Session, SessionError};
