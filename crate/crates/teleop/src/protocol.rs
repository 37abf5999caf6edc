//! Wire messages. Every message is one line of UTF-8 JSON tagged by `type`.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use visk_core::data::{PROPRIO_WIDTH, TACTILE_WIDTH};

/// Velocity command in normalised units; the server clamps each component
/// to `[-1, 1]` and scales by the velocity limit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    /// Desired gripper closure in `[0, 1]`.
    pub grip: f64,
    /// Client timestamp, ms since the epoch.
    pub ts: f64,
}

impl Command {
    /// Components clamped to their ranges; non-finite values become 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64, lo: f64, hi: f64| if v.is_finite() { v.clamp(lo, hi) } else { 0.0 };
        Self { vx: c(self.vx, -1.0, 1.0), vy: c(self.vy, -1.0, 1.0), vz: c(self.vz, -1.0, 1.0), grip: c(self.grip, 0.0, 1.0), ts: self.ts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Cmd(Command),
    /// Begins a recorded episode, optionally at a given slot position.
    StartEpisode {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slot_xy: Option<[f64; 2]>,
    },
    /// Ends the episode; a successful one is saved.
    StopEpisode,
    /// Discards the episode and lays out a new scene.
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slot_xy: Option<[f64; 2]>,
    },
}

/// Snapshot broadcast to the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    /// View name to base64 raw RGB (`H×W×3`).
    pub views: BTreeMap<String, String>,
    /// Baseline-subtracted skin reading.
    pub tactile: [f32; TACTILE_WIDTH],
    pub proprio: [f32; PROPRIO_WIDTH],
    pub success: bool,
    pub recording: bool,
    /// Direction perturbation applied on the latest tick, degrees.
    pub theta: f64,
}

impl Frame {
    pub fn encode_image(rgb: &[u8]) -> String {
        STANDARD.encode(rgb)
    }

    pub fn decode_view(&self, view: &str) -> Option<Vec<u8>> {
        STANDARD.decode(self.views.get(view)?).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedJson,
    UnknownType,
    InvalidMessage,
    InvalidTarget,
    IoFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(Frame),
    Error { code: ErrorCode, msg: String },
}

impl ServerMessage {
    pub fn error(code: ErrorCode, msg: impl Into<String>) -> Self {
        Self::Error { code, msg: msg.into() }
    }

    /// One protocol line, newline included.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages serialise");
        s.push('\n');
        s
    }
}

const CLIENT_TYPES: [&str; 4] = ["cmd", "start_episode", "stop_episode", "reset"];

/// Parses one client line, classifying failures the way the error frame
/// reports them.
pub fn parse_client_line(line: &str) -> Result<ClientMessage, (ErrorCode, String)> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| (ErrorCode::MalformedJson, e.to_string()))?;
    let ty = value.get("type").and_then(|t| t.as_str()).ok_or((ErrorCode::InvalidMessage, "missing `type`".to_string()))?;
    if !CLIENT_TYPES.contains(&ty) {
        return Err((ErrorCode::UnknownType, format!("unknown message type `{ty}`")));
    }
    serde_json::from_value(value).map_err(|e| (ErrorCode::InvalidMessage, e.to_string()))
}
