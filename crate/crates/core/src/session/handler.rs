//! Transport-independent message handling shared by the WebSocket server
//! and the relay.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::manager::{SessionError, SessionManager, StepGuidance};
use super::protocol::{BinaryFrame, ClientBody, ClientMessage, FrameKind, ProtocolError, ServerBody, ServerMessage, SnapshotUpload};
use super::timer::Tick;
use crate::plan::VisualType;
use crate::scene::SceneSnapshot;

/// Resolves `"<bundle>/<scene>"` references against a fixture directory
/// laid out as `<root>/<bundle>/scenes/<scene>/`.
#[derive(Debug, Clone, Default)]
pub struct FixtureScenes {
    root: Option<PathBuf>,
}

impl FixtureScenes {
    pub fn new(root: Option<PathBuf>) -> Self {
        FixtureScenes { root }
    }

    pub fn resolve(&self, scene_ref: &str) -> Result<SceneSnapshot, String> {
        let root = self.root.as_ref().ok_or("server has no fixture directory")?;
        let (bundle, scene) = scene_ref.split_once('/').ok_or_else(|| format!("scene ref {scene_ref:?} is not <bundle>/<scene>"))?;
        let safe = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && s != "..";
        if !safe(bundle) || !safe(scene) {
            return Err(format!("scene ref {scene_ref:?} has unsupported characters"));
        }
        SceneSnapshot::load(&root.join(bundle).join("scenes").join(scene)).map_err(|e| e.to_string())
    }
}

pub struct ProtocolHandler {
    manager: SessionManager,
    fixtures: FixtureScenes,
}

impl ProtocolHandler {
    pub fn new(manager: SessionManager, fixtures: FixtureScenes) -> Self {
        ProtocolHandler { manager, fixtures }
    }

    pub fn manager(&self) -> &SessionManager {
        &self.manager
    }

    pub fn connect(self: &Arc<Self>) -> Connection {
        Connection {
            handler: self.clone(),
            session_id: None,
            out_seq: Arc::new(AtomicU64::new(0)),
            frames: HashMap::new(),
            snapshots: HashMap::new(),
        }
    }
}

/// Numbers outgoing messages for one client.
#[derive(Debug, Clone)]
pub struct Stamper {
    seq: Arc<AtomicU64>,
}

impl Stamper {
    pub fn stamp(&self, session_id: Option<String>, body: ServerBody) -> ServerMessage {
        ServerMessage { session_id, seq: self.seq.fetch_add(1, Ordering::Relaxed) + 1, body }
    }
}

/// Per-client state: uploaded frames, registered snapshots, the attached
/// session and the outgoing sequence counter.
pub struct Connection {
    handler: Arc<ProtocolHandler>,
    session_id: Option<String>,
    out_seq: Arc<AtomicU64>,
    frames: HashMap<String, BinaryFrame>,
    snapshots: HashMap<String, SceneSnapshot>,
}

fn error_body(e: &SessionError) -> ServerBody {
    let (step_index, stage) = match e {
        SessionError::Compile(c) => (Some(c.step_index), Some(format!("{:?}", c.stage).to_lowercase())),
        _ => (None, None),
    };
    ServerBody::Error { code: e.code().into(), message: e.to_string(), step_index, stage }
}

fn guidance_body(g: StepGuidance) -> ServerBody {
    ServerBody::GuidanceReady {
        step_index: g.step_index,
        step_count: g.step_count,
        scene: g.compiled.scene,
        timing: g.compiled.timing,
        cached: g.cached,
    }
}

impl Connection {
    pub fn session_id(&self) -> Option<&str> {
        self.session_id.as_deref()
    }

    pub fn stamper(&self) -> Stamper {
        Stamper { seq: self.out_seq.clone() }
    }

    fn reply(&self, body: ServerBody) -> ServerMessage {
        self.stamper().stamp(self.session_id.clone(), body)
    }

    pub fn tick_message(&self, tick: Tick) -> ServerMessage {
        self.reply(ServerBody::TimerTick { step_index: tick.step_index, remaining: tick.remaining, expired: tick.expired })
    }

    /// Stores an uploaded frame. Only a malformed frame produces a reply.
    pub fn on_binary(&mut self, data: &[u8]) -> Vec<ServerMessage> {
        match BinaryFrame::decode(data) {
            Ok(frame) => {
                self.frames.insert(frame.frame_id.clone(), frame);
                Vec::new()
            }
            Err(e) => vec![self.reply(ServerBody::error("protocol", e.to_string()))],
        }
    }

    pub async fn on_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match ClientMessage::from_json(text) {
            Ok(msg) => self.on_message(msg).await,
            Err(e @ ProtocolError::Version(_)) => vec![self.reply(ServerBody::error("version", e.to_string()))],
            Err(e) => vec![self.reply(ServerBody::error("protocol", e.to_string()))],
        }
    }

    fn snapshot(&self, id: &str) -> Result<SceneSnapshot, ServerBody> {
        self.snapshots.get(id).cloned().ok_or_else(|| ServerBody::error("unknown_snapshot", format!("no snapshot {id:?}")))
    }

    fn register(&mut self, up: SnapshotUpload) -> Result<(), ServerBody> {
        let bad = |m: String| ServerBody::error("bad_snapshot", m);
        let snap = if let Some(r) = &up.scene_ref {
            self.handler.fixtures.resolve(r).map_err(bad)?
        } else {
            let (Some(meta), Some(img), Some(depth)) = (&up.meta, &up.image_frame, &up.depth_frame) else {
                return Err(bad("snapshot needs scene_ref or meta, image_frame and depth_frame".into()));
            };
            let frame = |id: &str, kind: FrameKind| match self.frames.get(id) {
                Some(f) if f.kind == kind => Ok(f.bytes.clone()),
                Some(_) => Err(bad(format!("frame {id:?} has the wrong kind"))),
                None => Err(bad(format!("no frame {id:?}"))),
            };
            let png = frame(img, FrameKind::Png)?;
            let depth = frame(depth, FrameKind::DepthF32)?;
            SceneSnapshot::from_meta(meta, png, &depth).map_err(|e| bad(e.to_string()))?
        };
        self.snapshots.insert(up.snapshot_id, snap);
        Ok(())
    }

    /// Handles one control message and returns the replies in order.
    pub async fn on_message(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        if let Some(id) = &msg.session_id {
            if self.session_id.as_deref() != Some(id) && self.handler.manager.state(id).is_ok() {
                self.session_id = Some(id.clone());
            }
        }
        let manager = self.handler.manager.clone();
        let target = msg.session_id.clone().or_else(|| self.session_id.clone());
        let need_session = || target.clone().ok_or_else(|| ServerBody::error("unknown_session", "message needs a session_id"));
        let result: Result<Vec<ServerBody>, ServerBody> = async {
            match msg.body {
                ClientBody::Snapshot(up) => self.register(up).map(|_| Vec::new()),
                ClientBody::Query { query, snapshot_id } => {
                    let snap = self.snapshot(&snapshot_id)?;
                    let created = manager.create_session(&query, snap).await.map_err(|e| error_body(&e))?;
                    self.session_id = Some(created.session_id.clone());
                    let plan = serde_json::to_value(&created.plan).expect("plans serialize");
                    let mut out = vec![ServerBody::PlanReady { plan, step_count: created.plan.len() }];
                    out.push(created.guidance.map(guidance_body).unwrap_or_else(|e| error_body(&e)));
                    Ok(out)
                }
                ClientBody::Advance { snapshot_id } => {
                    let id = need_session()?;
                    let snap = snapshot_id.map(|s| self.snapshot(&s)).transpose()?;
                    manager.advance(&id, snap).await.map(|g| vec![guidance_body(g)]).map_err(|e| error_body(&e))
                }
                ClientBody::Back {} => {
                    let id = need_session()?;
                    manager.back(&id).await.map(|g| vec![guidance_body(g)]).map_err(|e| error_body(&e))
                }
                ClientBody::GetState {} => {
                    let id = need_session()?;
                    let v = manager.state(&id).map_err(|e| error_body(&e))?;
                    Ok(vec![ServerBody::State {
                        current_step: v.current_step,
                        step_count: v.step_count,
                        compiled_steps: v.compiled_steps,
                        timer: v.timer,
                    }])
                }
            }
        }
        .await;
        let bodies = result.unwrap_or_else(|e| vec![e]);
        bodies.into_iter().map(|b| self.reply(b)).collect()
    }

    /// Call once `sent` has been handed to the transport: starts countdowns
    /// for any widget guidance among them, so ticks follow the guidance.
    pub fn after_send(&self, sent: &[ServerMessage]) {
        for m in sent {
            if let (Some(id), ServerBody::GuidanceReady { step_index, scene, .. }) = (&m.session_id, &m.body) {
                if scene.visual_type == VisualType::Widget {
                    let _ = self.handler.manager.arm_timer(id, *step_index);
                }
            }
        }
    }
}
