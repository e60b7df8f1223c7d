//! The `gr/1` message protocol.
//!
//! Control messages are JSON documents:
//!
//! ```json
//! {"v": "gr/1", "session_id": "s-0001", "seq": 7, "kind": "advance", "payload": {"snapshot_id": "f2"}}
//! ```
//!
//! `session_id` is omitted only on the `query` that creates a session.
//! `seq` increases by one per message from each sender, starting at 1.
//! Image and depth bytes travel as binary frames referenced by id from a
//! `snapshot` message; see [`BinaryFrame`].

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::compiler::{SceneGraph, StepTiming};
use crate::scene::SceneMeta;

pub const PROTOCOL_VERSION: &str = "gr/1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("unsupported protocol version {0:?}")]
    Version(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("malformed binary frame: {0}")]
    Frame(String),
}

/// Messages a client sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ClientBody {
    /// Starts a session from a task query and a registered snapshot.
    Query { query: String, snapshot_id: String },
    /// Registers a snapshot, either from uploaded frames or a fixture scene.
    Snapshot(SnapshotUpload),
    /// Moves to the next step, optionally with a fresh snapshot.
    Advance {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        snapshot_id: Option<String>,
    },
    Back {},
    GetState {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotUpload {
    pub snapshot_id: String,
    /// `"<bundle>/<scene>"` naming a scene in the server's fixture set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_ref: Option<String>,
    /// Metadata for uploaded frames; file names inside are ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<SceneMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_frame: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_frame: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerStatus {
    pub step_index: usize,
    pub seconds: u32,
}

/// Messages the server sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum ServerBody {
    PlanReady {
        /// The plan document, in the same shape the planner returns.
        plan: Value,
        step_count: usize,
    },
    GuidanceReady {
        step_index: usize,
        step_count: usize,
        scene: SceneGraph,
        timing: StepTiming,
        /// True when served from cache rather than compiled now.
        cached: bool,
    },
    TimerTick {
        step_index: usize,
        remaining: u32,
        expired: bool,
    },
    Error {
        code: String,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_index: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stage: Option<String>,
    },
    /// Reply to `get_state`.
    State {
        current_step: usize,
        step_count: usize,
        compiled_steps: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timer: Option<TimerStatus>,
    },
}

impl ServerBody {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerBody::Error { code: code.into(), message: message.into(), step_index: None, stage: None }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServerBody::PlanReady { .. } => "plan_ready",
            ServerBody::GuidanceReady { .. } => "guidance_ready",
            ServerBody::TimerTick { .. } => "timer_tick",
            ServerBody::Error { .. } => "error",
            ServerBody::State { .. } => "state",
        }
    }
}

/// A message with its routing header.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<B> {
    pub session_id: Option<String>,
    pub seq: u64,
    pub body: B,
}

pub type ClientMessage = Envelope<ClientBody>;
pub type ServerMessage = Envelope<ServerBody>;

#[derive(Serialize, Deserialize)]
struct Wire {
    v: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    session_id: Option<String>,
    seq: u64,
    kind: String,
    #[serde(default)]
    payload: Value,
}

impl<B: Serialize> Envelope<B> {
    pub fn to_json(&self) -> String {
        let tagged = serde_json::to_value(&self.body).expect("message bodies serialize");
        let kind = tagged["kind"].as_str().expect("tagged body").to_string();
        let payload = tagged.get("payload").cloned().unwrap_or_else(|| Value::Object(Default::default()));
        let wire = Wire { v: PROTOCOL_VERSION.into(), session_id: self.session_id.clone(), seq: self.seq, kind, payload };
        serde_json::to_string(&wire).expect("wire messages serialize")
    }
}

impl<B: for<'de> Deserialize<'de>> Envelope<B> {
    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        let wire: Wire = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        if wire.v != PROTOCOL_VERSION {
            return Err(ProtocolError::Version(wire.v));
        }
        let payload = if wire.payload.is_null() { Value::Object(Default::default()) } else { wire.payload };
        let tagged = serde_json::json!({"kind": wire.kind, "payload": payload});
        let body = serde_json::from_value(tagged).map_err(|e| ProtocolError::Malformed(format!("{}: {e}", wire.kind)))?;
        Ok(Envelope { session_id: wire.session_id, seq: wire.seq, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Png = 0,
    DepthF32 = 1,
}

/// Binary frame: `[kind: u8][id_len: u8][id: id_len bytes of UTF-8][bytes]`,
/// kind 0 for PNG and 1 for little-endian `f32` depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryFrame {
    pub kind: FrameKind,
    pub frame_id: String,
    pub bytes: Vec<u8>,
}

impl BinaryFrame {
    pub fn encode(&self) -> Vec<u8> {
        let id = self.frame_id.as_bytes();
        assert!(id.len() <= u8::MAX as usize, "frame id longer than 255 bytes");
        let mut out = Vec::with_capacity(2 + id.len() + self.bytes.len());
        out.push(self.kind as u8);
        out.push(id.len() as u8);
        out.extend_from_slice(id);
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn decode(data: &[u8]) -> Result<Self, ProtocolError> {
        let [kind, len, rest @ ..] = data else {
            return Err(ProtocolError::Frame("shorter than its header".into()));
        };
        let kind = match kind {
            0 => FrameKind::Png,
            1 => FrameKind::DepthF32,
            k => return Err(ProtocolError::Frame(format!("unknown kind {k}"))),
        };
        let len = *len as usize;
        if rest.len() < len || len == 0 {
            return Err(ProtocolError::Frame("bad frame id length".into()));
        }
        let frame_id = std::str::from_utf8(&rest[..len]).map_err(|_| ProtocolError::Frame("frame id is not UTF-8".into()))?;
        Ok(BinaryFrame { kind, frame_id: frame_id.to_string(), bytes: rest[len..].to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_round_trip() {
        let m = ClientMessage {
            session_id: Some("s-1".into()),
            seq: 7,
            body: ClientBody::Advance { snapshot_id: Some("f2".into()) },
        };
        let text = m.to_json();
        assert_eq!(text, r#"{"v":"gr/1","session_id":"s-1","seq":7,"kind":"advance","payload":{"snapshot_id":"f2"}}"#);
        assert_eq!(ClientMessage::from_json(&text).unwrap(), m);
        let back = ClientMessage { session_id: Some("s-1".into()), seq: 8, body: ClientBody::Back {} };
        assert_eq!(ClientMessage::from_json(&back.to_json()).unwrap(), back);
        let no_payload = r#"{"v":"gr/1","session_id":"s","seq":1,"kind":"get_state"}"#;
        assert_eq!(ClientMessage::from_json(no_payload).unwrap().body, ClientBody::GetState {});
    }

    #[test]
    fn version_and_kind_checked() {
        let old = r#"{"v":"gr/0","seq":1,"kind":"back","payload":{}}"#;
        assert!(matches!(ClientMessage::from_json(old), Err(ProtocolError::Version(_))));
        let bad = r#"{"v":"gr/1","seq":1,"kind":"dance","payload":{}}"#;
        assert!(matches!(ClientMessage::from_json(bad), Err(ProtocolError::Malformed(_))));
    }

    #[test]
    fn binary_frames() {
        let f = BinaryFrame { kind: FrameKind::DepthF32, frame_id: "d1".into(), bytes: vec![0, 0, 128, 63] };
        let enc = f.encode();
        assert_eq!(&enc[..4], &[1, 2, b'd', b'1']);
        assert_eq!(BinaryFrame::decode(&enc).unwrap(), f);
        assert!(BinaryFrame::decode(&[0]).is_err());
        assert!(BinaryFrame::decode(&[7, 1, b'x']).is_err());
        assert!(BinaryFrame::decode(&[0, 5, b'x']).is_err());
    }

    #[test]
    fn server_error_shape() {
        let m = ServerMessage { session_id: None, seq: 1, body: ServerBody::error("empty_query", "query is empty") };
        let v: Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["kind"], "error");
        assert_eq!(v["payload"]["code"], "empty_query");
        assert!(v.get("session_id").is_none());
    }
}
