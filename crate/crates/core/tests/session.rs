mod common;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use arguide_core::eval::FixtureBundle;
use arguide_core::scene::SceneSnapshot;
use arguide_core::session::journal::Journal;
use arguide_core::session::protocol::{BinaryFrame, ClientBody, FrameKind, ServerBody, ServerMessage, SnapshotUpload};
use arguide_core::session::server::router;
use arguide_core::session::{FixtureScenes, ProtocolHandler, SequentialIds, SessionEvent, SessionManager};
use arguide_core::vision::{MockProvider, MockSpec};
use futures::{SinkExt, StreamExt};
use serde_json::json;

use common::{bundle_compiler, compiler_for, fixtures, manager, msg, SESSION};

fn bundle(name: &str) -> FixtureBundle {
    FixtureBundle::load(&fixtures().join("bundles").join(name)).unwrap()
}

fn bundle_handler(name: &str) -> Arc<ProtocolHandler> {
    Arc::new(ProtocolHandler::new(manager(bundle_compiler(name)), FixtureScenes::new(Some(fixtures().join("bundles")))))
}

fn scene_ref(id: &str, r: &str) -> ClientBody {
    ClientBody::Snapshot(SnapshotUpload {
        snapshot_id: id.into(),
        scene_ref: Some(r.into()),
        meta: None,
        image_frame: None,
        depth_frame: None,
    })
}

fn query(q: &str, snapshot: &str) -> ClientBody {
    ClientBody::Query { query: q.into(), snapshot_id: snapshot.into() }
}

fn kinds(replies: &[ServerMessage]) -> Vec<&'static str> {
    replies.iter().map(|m| m.body.kind()).collect()
}

fn error_code(m: &ServerMessage) -> &str {
    match &m.body {
        ServerBody::Error { code, .. } => code,
        other => panic!("expected an error, got {}", other.kind()),
    }
}

#[tokio::test]
async fn query_yields_plan_then_first_guidance() {
    let h = bundle_handler("printer-clean");
    let b = bundle("printer-clean");
    let mut c = h.connect();
    assert!(c.on_message(msg(1, scene_ref("f0", "printer-clean/s0"))).await.is_empty());
    let replies = c.on_message(msg(2, query(&b.manifest.query, "f0"))).await;
    assert_eq!(kinds(&replies), ["plan_ready", "guidance_ready"]);
    assert_eq!(replies.iter().map(|m| m.seq).collect::<Vec<_>>(), [1, 2]);
    assert!(replies.iter().all(|m| m.session_id.as_deref() == Some(SESSION)));
    let ServerBody::PlanReady { step_count, .. } = &replies[0].body else { unreachable!() };
    assert_eq!(*step_count, b.manifest.steps.len());
    let ServerBody::GuidanceReady { step_index: 0, cached: false, .. } = &replies[1].body else { panic!("{:?}", replies[1]) };

    let state = c.on_message(msg(3, ClientBody::GetState {})).await;
    let ServerBody::State { current_step, step_count, compiled_steps, timer } = &state[0].body else { panic!() };
    assert_eq!((*current_step, *step_count, compiled_steps.as_slice(), timer), (0, b.manifest.steps.len(), &[0][..], &None));
}

#[tokio::test]
async fn protocol_errors_carry_codes() {
    let h = bundle_handler("kitchen");
    let mut c = h.connect();

    let r = c.on_message(msg(1, query("start the microwave", "nope"))).await;
    assert_eq!(error_code(&r[0]), "unknown_snapshot");

    c.on_message(msg(2, scene_ref("f0", "kitchen/s0"))).await;
    let r = c.on_message(msg(3, query("   ", "f0"))).await;
    assert_eq!(error_code(&r[0]), "empty_query");

    let r = c.on_message(msg(4, scene_ref("f1", "../etc"))).await;
    assert_eq!(error_code(&r[0]), "bad_snapshot");

    let r = c.on_message(msg(5, ClientBody::Advance { snapshot_id: None })).await;
    assert_eq!(error_code(&r[0]), "unknown_session");

    let r = c.on_text(r#"{"v":"gr/0","seq":6,"kind":"get_state","payload":{}}"#).await;
    assert_eq!(error_code(&r[0]), "version");

    let r = c.on_text("{not json").await;
    assert_eq!(error_code(&r[0]), "protocol");

    let r = c.on_binary(&[9, 1, b'x']);
    assert_eq!(error_code(&r[0]), "protocol");
    let r = c.on_binary(&[0]);
    assert_eq!(error_code(&r[0]), "protocol");

    // Eight error replies so far, numbered 1..=8.
    assert_eq!(c.stamper().stamp(None, ServerBody::error("x", "y")).seq, 9);
}

#[tokio::test]
async fn uploaded_frames_match_the_fixture_scene() {
    let snap = SceneSnapshot::load(&fixtures().join("bundles/printer-clean/scenes/s0")).unwrap();
    let b = bundle("printer-clean");

    let by_ref = bundle_handler("printer-clean");
    let mut c1 = by_ref.connect();
    c1.on_message(msg(1, scene_ref("f0", "printer-clean/s0"))).await;
    let r1 = c1.on_message(msg(2, query(&b.manifest.query, "f0"))).await;

    let by_upload = bundle_handler("printer-clean");
    let mut c2 = by_upload.connect();
    let png = BinaryFrame { kind: FrameKind::Png, frame_id: "img0".into(), bytes: snap.image.png().to_vec() };
    let depth = BinaryFrame { kind: FrameKind::DepthF32, frame_id: "dep0".into(), bytes: snap.depth.to_le_bytes() };
    assert!(c2.on_binary(&png.encode()).is_empty());
    assert!(c2.on_binary(&depth.encode()).is_empty());

    let swapped = ClientBody::Snapshot(SnapshotUpload {
        snapshot_id: "bad".into(),
        scene_ref: None,
        meta: Some(snap.meta()),
        image_frame: Some("dep0".into()),
        depth_frame: Some("img0".into()),
    });
    assert_eq!(error_code(&c2.on_message(msg(1, swapped)).await[0]), "bad_snapshot");

    let upload = ClientBody::Snapshot(SnapshotUpload {
        snapshot_id: "f0".into(),
        scene_ref: None,
        meta: Some(snap.meta()),
        image_frame: Some("img0".into()),
        depth_frame: Some("dep0".into()),
    });
    assert!(c2.on_message(msg(2, upload)).await.is_empty());
    let r2 = c2.on_message(msg(3, query(&b.manifest.query, "f0"))).await;

    let scene = |r: &[ServerMessage]| match &r[1].body {
        ServerBody::GuidanceReady { scene, .. } => serde_json::to_string(scene).unwrap(),
        other => panic!("{other:?}"),
    };
    assert_eq!(scene(&r1), scene(&r2));
}

/// Creates a printer-reset session and walks it to the widget step,
/// compiling every step against its labeled scene.
async fn at_widget_step() -> (SessionManager, usize) {
    let b = bundle("printer-reset");
    let m = manager(bundle_compiler("printer-reset"));
    let created = m.create_session(&b.manifest.query, b.initial().clone()).await.unwrap();
    created.guidance.unwrap();
    let widget = b.manifest.steps.iter().position(|s| s.expected_visual_type == arguide_core::plan::VisualType::Widget).unwrap();
    for i in 1..=widget {
        m.advance(SESSION, Some(b.scene_for_step(i).clone())).await.unwrap();
    }
    (m, widget)
}

fn collect_ticks(m: &SessionManager) -> Arc<Mutex<Vec<(u32, bool, tokio::time::Instant)>>> {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    let mut events = m.subscribe(SESSION).unwrap();
    tokio::spawn(async move {
        while let Ok(SessionEvent::TimerTick(t)) = events.recv().await {
            sink.lock().unwrap().push((t.remaining, t.expired, tokio::time::Instant::now()));
        }
    });
    seen
}

#[tokio::test]
async fn widget_countdown_ticks_every_second() {
    let (m, widget) = at_widget_step().await;
    let seconds = match m.plan(SESSION).unwrap().steps[widget].payload {
        arguide_core::plan::StepPayload::Widget { seconds } => seconds,
        ref other => panic!("{other:?}"),
    };
    assert_eq!(seconds, 90);
    let seen = collect_ticks(&m);

    tokio::time::pause();
    assert!(m.arm_timer(SESSION, widget).unwrap());
    assert!(!m.arm_timer(SESSION, widget).unwrap(), "a running countdown is not restarted");
    tokio::time::sleep(Duration::from_millis(500)).await;
    assert_eq!(m.state(SESSION).unwrap().timer.map(|t| t.seconds), Some(90));
    tokio::time::sleep(Duration::from_secs(120)).await;

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), seconds as usize + 1);
    let start = seen[0].2;
    for (i, (remaining, expired, at)) in seen.iter().enumerate() {
        assert_eq!(*remaining, seconds - i as u32);
        assert_eq!(*expired, i == seconds as usize);
        assert_eq!(*at - start, Duration::from_secs(i as u64));
    }
    assert_eq!(m.state(SESSION).unwrap().timer, None);
}

#[tokio::test]
async fn leaving_the_step_stops_the_countdown() {
    let (m, widget) = at_widget_step().await;
    let seen = collect_ticks(&m);

    tokio::time::pause();
    assert!(m.arm_timer(SESSION, widget).unwrap());
    tokio::time::sleep(Duration::from_millis(10_500)).await;
    let g = m.back(SESSION).await.unwrap();
    assert!(g.cached);
    assert!(!m.arm_timer(SESSION, widget).unwrap(), "only the current step can be armed");
    tokio::time::sleep(Duration::from_secs(120)).await;

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 11);
    assert!(seen.iter().all(|(_, expired, _)| !expired));
    assert_eq!(m.state(SESSION).unwrap().timer, None);
}

#[tokio::test]
async fn back_serves_byte_identical_guidance() {
    let b = bundle("kitchen");
    let m = manager(bundle_compiler("kitchen"));
    let created = m.create_session(&b.manifest.query, b.initial().clone()).await.unwrap();
    let first = created.guidance.unwrap();
    let second = m.advance(SESSION, Some(b.scene_for_step(1).clone())).await.unwrap();
    assert!(!second.cached);

    let again = m.back(SESSION).await.unwrap();
    assert!(again.cached);
    assert_eq!(again.step_index, 0);
    assert_eq!(serde_json::to_vec(&again.compiled).unwrap(), serde_json::to_vec(&first.compiled).unwrap());

    let forward = m.advance(SESSION, None).await.unwrap();
    assert!(forward.cached);
    assert_eq!(serde_json::to_vec(&forward.compiled).unwrap(), serde_json::to_vec(&second.compiled).unwrap());
}

#[tokio::test]
async fn journal_restores_sessions_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle("printer-clean");
    let fresh = || {
        SessionManager::with_options(bundle_compiler("printer-clean"), Box::new(SequentialIds::default()), Some(Journal::new(dir.path())))
    };

    let m = fresh();
    m.create_session(&b.manifest.query, b.initial().clone()).await.unwrap().guidance.unwrap();
    m.advance(SESSION, Some(b.scene_for_step(1).clone())).await.unwrap();
    m.advance(SESSION, Some(b.scene_for_step(2).clone())).await.unwrap();
    m.back(SESSION).await.unwrap();
    let digest = m.digest(SESSION).unwrap();
    let state = m.state(SESSION).unwrap();
    let step2 = m.guidance(SESSION, 2).unwrap().unwrap();
    drop(m);

    let restarted = fresh();
    assert_eq!(restarted.recover().unwrap(), [SESSION]);
    assert_eq!(restarted.digest(SESSION).unwrap(), digest);
    assert_eq!(restarted.state(SESSION).unwrap(), state);
    let g = restarted.advance(SESSION, None).await.unwrap();
    assert!(g.cached);
    assert_eq!(g.compiled, step2);
}

#[tokio::test]
async fn failed_compile_leaves_the_session_usable() {
    let root = tempfile::tempdir().unwrap();
    let snap = SceneSnapshot::synthetic(64, 48, 50.0, 1.0, arguide_core::geometry::CameraPose::identity());
    snap.save(&root.path().join("mc/scenes/s0")).unwrap();
    let plan = json!({"instructions": [
        {"instruction": "Lift the red lid", "visual_type": 1, "key_components": ["red lid"]},
        {"instruction": "Press the blue switch", "visual_type": 3, "key_components": ["blue switch", "poke"]},
    ]});
    let spec: MockSpec = serde_json::from_value(json!({
        "plan": [plan.to_string()],
        "bbox": { "synthetic/red lid": r#"{"name": "red lid", "pos": [10, 10, 30, 40]}"# },
    }))
    .unwrap();
    let provider = MockProvider::from_spec("mock:broken", root.path(), &spec).unwrap();
    let h = Arc::new(ProtocolHandler::new(manager(compiler_for(provider)), FixtureScenes::new(Some(root.path().to_path_buf()))));
    let mut c = h.connect();
    c.on_message(msg(1, scene_ref("f0", "mc/s0"))).await;
    assert_eq!(kinds(&c.on_message(msg(2, query("lift the lid", "f0"))).await), ["plan_ready", "guidance_ready"]);

    for seq in [3, 4] {
        let r = c.on_message(msg(seq, ClientBody::Advance { snapshot_id: None })).await;
        let ServerBody::Error { code, step_index, stage, .. } = &r[0].body else { panic!("{:?}", r[0]) };
        assert_eq!((code.as_str(), *step_index), ("compile_failed", Some(1)));
        assert!(stage.is_some());
    }
    let r = c.on_message(msg(5, ClientBody::GetState {})).await;
    let ServerBody::State { current_step: 0, ref compiled_steps, .. } = r[0].body else { panic!("{:?}", r[0]) };
    assert_eq!(compiled_steps, &[0]);
    let r = c.on_message(msg(6, ClientBody::Back {})).await;
    assert_eq!(error_code(&r[0]), "at_first_step");
}

#[tokio::test]
async fn websocket_round_trip() {
    let h = bundle_handler("kitchen");
    let b = bundle("kitchen");
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(async move { axum::serve(listener, router(h, None)).await });

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    use tokio_tungstenite::tungstenite::Message;
    let send = |m: arguide_core::session::protocol::ClientMessage| Message::Text(m.to_json().into());
    ws.send(send(msg(1, scene_ref("f0", "kitchen/s0")))).await.unwrap();
    ws.send(send(msg(2, query(&b.manifest.query, "f0")))).await.unwrap();
    ws.send(send(msg(3, ClientBody::Back {}))).await.unwrap();

    let mut got = Vec::new();
    while got.len() < 3 {
        let frame = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = frame {
            got.push(ServerMessage::from_json(t.as_str()).unwrap());
        }
    }
    assert_eq!(kinds(&got), ["plan_ready", "guidance_ready", "error"]);
    assert_eq!(error_code(&got[2]), "at_first_step");
    assert_eq!(got.iter().map(|m| m.seq).collect::<Vec<_>>(), [1, 2, 3]);
    server.abort();
}
