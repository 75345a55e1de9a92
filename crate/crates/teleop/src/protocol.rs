//! JSON text frames exchanged with operator clients.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Scripted,
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub action_delay_ms: u64,
    pub obs_delay_min_ms: u64,
    pub obs_delay_max_ms: u64,
    pub controller: ControllerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Configure(SessionConfig),
    Move { x: f64, y: f64, z: f64 },
    Pause,
    Resume,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub tick: u64,
    pub local: [f64; 3],
    pub remote: [f64; 3],
    pub delayed_view: [f64; 3],
    pub error: f64,
    pub kp: f64,
    pub kd: f64,
    pub obs_delay_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Telemetry(TelemetryFrame),
    Error {
        message: String,
    },
    Ack {
        of: String,
        /// Session id, on configure acks.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<u64>,
        /// Clamped target, on move acks.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<[f64; 3]>,
    },
}

impl ServerMessage {
    pub fn ack(of: &str) -> Self {
        ServerMessage::Ack {
            of: of.into(),
            session: None,
            target: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error {
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

pub fn parse_client(text: &str) -> Result<ClientMessage, String> {
    serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
}
