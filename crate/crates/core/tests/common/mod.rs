#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use arguide_core::compiler::assets::AssetLibrary;
use arguide_core::compiler::Compiler;
use arguide_core::geometry::CameraPose;
use arguide_core::scene::SceneSnapshot;
use arguide_core::session::protocol::{ClientBody, ClientMessage, ServerMessage, SnapshotUpload};
use arguide_core::session::relay::{client_channel, server_channel, MemoryRelay, Relay, RelayPacket, RelayServer};
use arguide_core::session::{FixtureScenes, ProtocolHandler, SequentialIds, SessionManager};
use arguide_core::vision::{GatewayConfig, MockProvider, MockSpec, RetryPolicy, VisionGateway};
use serde_json::json;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn gateway_config() -> GatewayConfig {
    GatewayConfig { retry: RetryPolicy::without_backoff(), ..GatewayConfig::default() }
}

pub fn compiler_for(provider: MockProvider) -> Compiler {
    Compiler::new(VisionGateway::new(Arc::new(provider), gateway_config()), Arc::new(AssetLibrary::builtin()))
}

/// Compiler answering from a fixture bundle's `provider.json`.
pub fn bundle_compiler(bundle: &str) -> Compiler {
    compiler_for(MockProvider::from_dir(&fixtures().join("bundles").join(bundle)).unwrap())
}

pub fn manager(compiler: Compiler) -> SessionManager {
    SessionManager::with_options(compiler, Box::new(SequentialIds::default()), None)
}

/// A three-step plan (highlight, gesture, highlight) over a small
/// synthetic scene saved as fixture scene `mc/s0`.
pub struct SyntheticWorld {
    pub root: tempfile::TempDir,
    pub handler: Arc<ProtocolHandler>,
}

pub const SYNTHETIC_STEPS: usize = 3;

pub fn synthetic_world() -> SyntheticWorld {
    let root = tempfile::tempdir().unwrap();
    let snap = SceneSnapshot::synthetic(64, 48, 50.0, 1.0, CameraPose::identity());
    snap.save(&root.path().join("mc/scenes/s0")).unwrap();
    let plan = json!({"instructions": [
        {"instruction": "Lift the red lid", "visual_type": 1, "key_components": ["red lid"]},
        {"instruction": "Press the blue switch", "visual_type": 3, "key_components": ["blue switch", "poke"]},
        {"instruction": "Check the green light", "visual_type": 1, "key_components": ["green light"]},
    ]});
    let spec: MockSpec = serde_json::from_value(json!({
        "plan": [plan.to_string()],
        "bbox": {
            "synthetic/red lid": r#"{"name": "red lid", "pos": [10, 10, 30, 40]}"#,
            "synthetic/blue switch": r#"{"name": "blue switch", "pos": [20, 30, 28, 44]}"#,
            "synthetic/green light": r#"{"name": "green light", "pos": [5, 50, 15, 60]}"#,
        },
    }))
    .unwrap();
    let provider = MockProvider::from_spec("mock:synthetic", root.path(), &spec).unwrap();
    let handler = Arc::new(ProtocolHandler::new(
        manager(compiler_for(provider)),
        FixtureScenes::new(Some(root.path().to_path_buf())),
    ));
    SyntheticWorld { root, handler }
}

pub const SESSION: &str = "s-0001";

pub fn msg(seq: u64, body: ClientBody) -> ClientMessage {
    let session_id = match body {
        ClientBody::Query { .. } | ClientBody::Snapshot(_) => None,
        _ => Some(SESSION.to_string()),
    };
    ClientMessage { session_id, seq, body }
}

pub fn snapshot_msg(seq: u64) -> ClientMessage {
    msg(
        seq,
        ClientBody::Snapshot(SnapshotUpload {
            snapshot_id: "f0".into(),
            scene_ref: Some("mc/s0".into()),
            meta: None,
            image_frame: None,
            depth_frame: None,
        }),
    )
}

pub fn query_msg(seq: u64) -> ClientMessage {
    msg(seq, ClientBody::Query { query: "How do I start the machine".into(), snapshot_id: "f0".into() })
}

/// What a relay run produced: the server's replies in posting order and
/// the session digest afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub replies: Vec<String>,
    pub digest: String,
}

/// Registers the snapshot, then delivers `script` through a memory relay
/// in the order given by `order`, polling once after every post.
pub async fn relay_run(script: &[ClientMessage], order: &[usize], duplicate: bool) -> RunResult {
    let world = synthetic_world();
    let relay = Arc::new(MemoryRelay::new());
    let mut server = RelayServer::new(relay.clone(), world.handler.clone());
    let now = Instant::now();
    let client = "c1";
    let post = |m: &ClientMessage| relay.post(&client_channel(client), &RelayPacket::text(m.to_json()).to_bytes()).unwrap();

    post(&snapshot_msg(1));
    server.poll_once(now).await.unwrap();
    relay.set_duplicate_posts(duplicate);
    for &i in order {
        post(&script[i]);
        server.poll_once(now).await.unwrap();
    }
    server.poll_once(now).await.unwrap();

    // The client side drops duplicate server messages by sequence number.
    let mut seen = std::collections::BTreeSet::new();
    let replies = relay
        .fetch(&server_channel(client), 0)
        .unwrap()
        .into_iter()
        .filter_map(|raw| match RelayPacket::from_bytes(&raw).unwrap() {
            RelayPacket::Text { text } => {
                let m = ServerMessage::from_json(&text).unwrap();
                seen.insert(m.seq).then(|| serde_json::to_string(&without_timing(&m)).unwrap())
            }
            RelayPacket::Binary { .. } => panic!("server posted a binary packet"),
        })
        .collect();
    let digest = world.handler.manager().digest(SESSION).unwrap();
    RunResult { replies, digest }
}

/// Reply body as JSON with stage timings removed.
pub fn without_timing(m: &ServerMessage) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
    if let Some(p) = v.get_mut("payload").and_then(|p| p.as_object_mut()) {
        p.remove("timing");
    }
    v
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    use itertools::Itertools;
    (0..n).permutations(n).collect()
}
