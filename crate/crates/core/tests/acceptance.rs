//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use arguide_core::compiler::{PrimitiveKind, PARTICLE_EDGE_THRESHOLD};
use arguide_core::eval::{aggregate, format_percent, load_outcomes, Category, FixtureBundle};
use arguide_core::geometry::{
    bbox_to_world_corners, project, surface_normal, unproject, BoundingBox2D, CameraIntrinsics, CameraPose, DepthMap,
    Mat3, Point2, Vec3, WorldPoint,
};
use arguide_core::plan::{
    classify_visual_type, parse_plan, validate_step, ClassifierLexicons, MatchRule, PlanStep, StepDocument, VisualType,
};
use arguide_core::scene::SceneSnapshot;
use arguide_core::session::protocol::{ClientBody, ClientMessage, ServerBody};
use arguide_core::session::{FixtureScenes, ProtocolHandler, SnapshotUpload};
use arguide_core::vision::{MockProvider, MockSpec};
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::{json, Value};

use common::*;

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn within(limit: Duration, started: Instant, what: &str) {
    let took = started.elapsed();
    assert!(took < limit, "{what} took {took:?}, limit {limit:?}");
}

// Schema suite.

fn appendix_snippets() -> Vec<Value> {
    vec![
        json!({"instruction": "press start button on the rice cooker", "visual_type": 1, "key_components": ["The orange Start button"]}),
        json!({"instruction": "Return the basket to the air fryer to resume cooking", "visual_type": 2, "key_components": ["Air fryer basket", "translation"]}),
        json!({"instruction": "Pull the filament out", "visual_type": 3, "key_components": ["filament on top of nozzle", "pinch"]}),
        json!({"instruction": "Mix the ingredients with a whisk", "visual_type": 4, "key_components": ["Mixing bowl", "rotate", "whisk"]}),
        json!({"instruction": "Let the food stand for 30s", "visual_type": 5, "key_components": ["Mixing bowl", "00:30"]}),
    ]
}

/// Single-fault mutants of the snippets, each with the field it breaks.
fn mutants() -> Vec<(Value, &'static str)> {
    let base = appendix_snippets();
    let mut out = Vec::new();
    for (t, snippet) in base.iter().enumerate() {
        let comps = snippet["key_components"].as_array().unwrap().clone();
        let required = [None, Some(2), Some(2), Some(3), Some(2)][t];
        for arity in 0..=4usize {
            if required.map_or(arity >= 1, |r| r == arity) {
                continue;
            }
            let mut list = comps.clone();
            list.resize(arity, json!("spare part"));
            let mut m = snippet.clone();
            m["key_components"] = Value::Array(list);
            out.push((m, "key_components"));
        }
        for bad in [json!(""), json!("   ")] {
            let mut m = snippet.clone();
            m["key_components"][0] = bad;
            out.push((m, "key_components[0]"));
        }
    }
    for bad in [json!(0), json!(6), json!(-1), json!("two"), json!(2.5), Value::Null] {
        let mut m = base[0].clone();
        m["visual_type"] = bad;
        out.push((m, "visual_type"));
    }
    for bad in ["slide", "teleport", "spin around", ""] {
        let mut m = base[1].clone();
        m["key_components"][1] = json!(bad);
        out.push((m, "key_components[1]"));
    }
    for bad in ["twist", "wave", "punch", "fist", ""] {
        let mut m = base[2].clone();
        m["key_components"][1] = json!(bad);
        out.push((m, "key_components[1]"));
    }
    for bad in ["diagonal", "shake", "sideways", ""] {
        let mut m = base[3].clone();
        m["key_components"][1] = json!(bad);
        out.push((m, "key_components[1]"));
    }
    for bad in ["", "  "] {
        let mut m = base[3].clone();
        m["key_components"][2] = json!(bad);
        out.push((m, "key_components[2]"));
    }
    for bad in ["30", "60:00", "00:60", "1:30", "00:3a", "-1:00", "00:30:00", ""] {
        let mut m = base[4].clone();
        m["key_components"][1] = json!(bad);
        out.push((m, "key_components[1]"));
    }
    for bad in [json!(""), json!(" "), Value::Null] {
        let mut m = base[0].clone();
        m["instruction"] = bad;
        out.push((m, "instruction"));
    }
    out
}

fn schema_suite() {
    let started = Instant::now();
    let doc = json!({ "instructions": appendix_snippets() });
    let plan = parse_plan(&doc.to_string()).unwrap();
    assert_eq!(plan.len(), 5);
    for (i, s) in appendix_snippets().into_iter().enumerate() {
        let d: StepDocument = serde_json::from_value(s).unwrap();
        assert!(validate_step(&d).is_empty(), "snippet {i}");
        assert!(PlanStep::from_document(i, &d).is_ok());
    }
    let mutants = mutants();
    assert!(mutants.len() >= 40, "only {} mutants", mutants.len());
    for (m, field) in &mutants {
        let d: StepDocument = serde_json::from_value(m.clone()).unwrap();
        let v = validate_step(&d);
        assert_eq!(v.len(), 1, "{m}: {v:?}");
        assert_eq!(v[0].field, *field, "{m}");
        let plan = json!({ "instructions": [m] });
        assert!(parse_plan(&plan.to_string()).is_err(), "{m}");
    }
    within(Duration::from_secs(1), started, "schema suite");
}

// Classifier suite.

fn classifier_suite() {
    let started = Instant::now();
    let lex = ClassifierLexicons::builtin();
    let code = |s: &str| classify_visual_type(s, lex).visual_type.code();
    assert_eq!(
        [
            code("Let the food stand for 30s"),
            code("Mix the ingredients with a whisk"),
            code("press start button on the rice cooker")
        ],
        [5, 4, 1]
    );
    assert_eq!(code("Pull the filament out"), 3);
    assert_eq!(code("Return the basket to the air fryer to resume cooking"), 2);

    // Tokens that classify to their own category in isolation.
    let order = [MatchRule::Waiting, MatchRule::Tool, MatchRule::Gesture, MatchRule::Movement];
    let pools: Vec<Vec<String>> = [&lex.waiting, &lex.tool, &lex.gesture, &lex.movement]
        .iter()
        .zip(order)
        .map(|(tokens, rule)| tokens.iter().filter(|t| classify_visual_type(t, lex).rule == rule).cloned().collect())
        .collect();
    assert!(pools.iter().all(|p| !p.is_empty()));

    let fillers = ["the", "gently", "near", "panel", "then", "carefully", "lid", "slowly"];
    let strategy = (
        proptest::collection::vec(any::<bool>(), 4),
        proptest::collection::vec(any::<prop::sample::Index>(), 4),
        proptest::collection::vec(prop::sample::select(fillers.to_vec()), 0..4),
        any::<prop::sample::Index>(),
    );
    let mut runner = TestRunner::new(Config { cases: 200, failure_persistence: None, ..Config::default() });
    runner
        .run(&strategy, |(present, picks, filler, rot)| {
            let mut words: Vec<String> = Vec::new();
            let mut expected = MatchRule::Default;
            for c in (0..4).rev() {
                if present[c] {
                    words.push(picks[c].get(&pools[c]).clone());
                    expected = order[c];
                }
            }
            words.extend(filler.iter().map(|s| s.to_string()));
            if !words.is_empty() {
                let k = rot.index(words.len());
                words.rotate_left(k);
            }
            let text = format!("Now {}", words.join(" "));
            let got = classify_visual_type(&text, lex);
            prop_assert_eq!(got.rule, expected, "{}", text);
            Ok(())
        })
        .unwrap();
    within(Duration::from_secs(1), started, "classifier suite");
}

// Geometry suite.

fn geometry_suite() {
    let started = Instant::now();
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let camera = (200u32..2000, 200u32..2000, 0.3f64..2.0, 0.3f64..0.7, 0.3f64..0.7);
    let pose = (prop::array::uniform3(-1.0f64..1.0), -3.1f64..3.1, prop::array::uniform3(-5.0f64..5.0));
    runner
        .run(&(camera, pose, 0.0f64..1.0, 0.0f64..1.0, 0.05f64..20.0), |((w, h, f, px, py), (axis, angle, t), su, sv, d)| {
            let (w, h) = (w, h);
            let k = CameraIntrinsics::new(f * w as f64, f * w as f64 * 1.01, px * w as f64, py * h as f64, w, h).unwrap();
            let axis = Vec3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let r: Mat3 = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner();
            let pose = CameraPose::new(r, Vec3::from(t)).unwrap();
            let p = Point2::new(su * w as f64, sv * h as f64);
            let q = unproject(p, d, &k, &pose).unwrap();
            let back = project(&q, &k, &pose).unwrap();
            prop_assert!(back.distance(&p) < 1e-6, "{:?} -> {:?}", p, back);
            Ok(())
        })
        .unwrap();

    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let pt = || prop::array::uniform3(-10.0f64..10.0);
    runner
        .run(&(pt(), pt(), pt(), pt()), |(a, b, c, cam)| {
            let (a, b, c, cam) = (WorldPoint::from(a), WorldPoint::from(b), WorldPoint::from(c), WorldPoint::from(cam));
            let (e1, e2) = (b - a, c - a);
            let cross = e1.cross(&e2);
            prop_assume!(cross.norm() > 1e-3 * e1.norm() * e2.norm());
            prop_assume!((cross.normalize().dot(&(cam - c))).abs() > 1e-6);
            let n = surface_normal(&a, &b, &c, &cam).unwrap();
            prop_assert!((n.norm() - 1.0).abs() < 1e-9);
            prop_assert!(n.dot(&e1).abs() / e1.norm() < 1e-9);
            prop_assert!(n.dot(&e2).abs() / e2.norm() < 1e-9);
            prop_assert!(n.dot(&(cam - c)) > 0.0);
            Ok(())
        })
        .unwrap();

    let k = CameraIntrinsics::new(1000.0, 1000.0, 500.0, 400.0, 1000, 800).unwrap();
    let depth = DepthMap::uniform(250, 200, 2.0);
    let bbox = BoundingBox2D::new(350.0, 450.0, 450.0, 550.0).unwrap();
    let corners = bbox_to_world_corners(&bbox, &depth, &k, &CameraPose::identity()).unwrap();
    assert_eq!(corners.edges.bottom, 0.2);
    assert_eq!(corners.edges.top, 0.2);
    within(Duration::from_secs(5), started, "geometry suite");
}

// Particle threshold, through the compiler.

fn particle_rule() {
    let root = tempfile::tempdir().unwrap();
    let snap = SceneSnapshot::synthetic(800, 600, 1000.0, 1.0, CameraPose::identity());
    let (cx, cy) = (400.0, 300.0);
    let mut bbox = serde_json::Map::new();
    let sizes: Vec<u32> = (10..=100).collect();
    for &mm in &sizes {
        let h = mm as f64 / 2.0;
        let reply = json!({"name": "part", "pos": [cy - h, cx - h, cy + h, cx + h]});
        bbox.insert(format!("synthetic/part {mm}"), json!(reply.to_string()));
    }
    let spec: MockSpec = serde_json::from_value(json!({ "bbox": bbox })).unwrap();
    let compiler = compiler_for(MockProvider::from_spec("mock:edges", root.path(), &spec).unwrap());
    runtime().block_on(async {
        for &mm in &sizes {
            let doc = StepDocument::new("Find the part", 1, &[&format!("part {mm}")]);
            let step = PlanStep::from_document(0, &doc).unwrap();
            let out = compiler.compile_step(&snap, 0, &step, &snap).await.unwrap();
            let edge = mm as f64 / 1000.0;
            let expected = if edge < PARTICLE_EDGE_THRESHOLD { PrimitiveKind::ParticleEmitter } else { PrimitiveKind::Box3d };
            assert_eq!(out.scene.kinds(), vec![expected], "edge {edge} m");
        }
    });
}

// Golden sessions.

fn caption_word(t: VisualType) -> &'static str {
    match t {
        VisualType::Highlight => "highlight",
        VisualType::Movement => "movement",
        VisualType::HandGesture => "gesture",
        VisualType::Tool => "tool",
        VisualType::Widget => "widget",
    }
}

async fn golden_session(bundle_id: &str) -> (Vec<&'static str>, String) {
    let bundle = FixtureBundle::load(&fixtures().join("bundles").join(bundle_id)).unwrap();
    let m = manager(bundle_compiler(bundle_id));
    let created = m.create_session(&bundle.manifest.query, bundle.initial().clone()).await.unwrap();
    let id = created.session_id;
    assert_eq!(created.plan.len(), bundle.manifest.steps.len());
    if bundle.manifest.steps[0].scene != bundle.manifest.initial_scene {
        m.refresh(&id, Some(bundle.scene_for_step(0).clone())).await.unwrap();
    } else {
        created.guidance.unwrap();
    }
    for i in 1..bundle.manifest.steps.len() {
        m.advance(&id, Some(bundle.scene_for_step(i).clone())).await.unwrap();
    }
    let mut words = Vec::new();
    for (i, label) in bundle.manifest.steps.iter().enumerate() {
        let g = m.guidance(&id, i).unwrap().unwrap();
        words.push(caption_word(g.scene.visual_type));
        if let Some(kinds) = &label.expected_kinds {
            assert_eq!(&g.scene.kinds(), kinds, "{bundle_id} step {i}");
        }
    }
    (words, m.digest(&id).unwrap())
}

fn golden_pipeline() {
    let started = Instant::now();
    let rt = runtime();
    let fig1 = ["movement", "tool", "gesture", "tool", "highlight", "movement", "widget"];
    let fig3 = ["highlight", "tool", "movement", "highlight", "widget", "highlight", "gesture"];
    for (bundle, caption) in [("printer-clean", fig1), ("printer-reset", fig3)] {
        let (words, first) = rt.block_on(golden_session(bundle));
        assert_eq!(words, caption, "{bundle}");
        let (_, second) = rt.block_on(golden_session(bundle));
        assert!(first == second, "{bundle}: digests differ between runs");
    }
    within(Duration::from_secs(10), started, "golden pipeline");
}

// Metrics reproduction.

fn metrics_reproduction() {
    let t1 = aggregate(&load_outcomes(&fixtures().join("outcomes/plan_accuracy.json")).unwrap());
    let line = |label: &str| {
        let r = t1.row(label).unwrap();
        format!("{} {} {} {}", r.label, r.total, r.correct, format_percent(r.percentage()))
    };
    assert_eq!(line("Text Instruction"), "Text Instruction 100 96 96.0%");
    assert_eq!(line("Visual Type"), "Visual Type 100 90 90.0%");
    assert_eq!(line("Key Component"), "Key Component 100 97 97.0%");
    assert_eq!(line("Highlight"), "Highlight 40 32 80.0%");
    assert_eq!(line("Movement"), "Movement 20 17 85.0%");
    assert_eq!(line("Hand Gesture"), "Hand Gesture 14 11 78.6%");
    assert_eq!(line("Tool"), "Tool 4 3 75.0%");
    assert_eq!(line("Widget"), "Widget 5 5 100.0%");
    assert_eq!(line("Total"), "Total 100 65 65.0%");

    let t2 = aggregate(&load_outcomes(&fixtures().join("outcomes/guidance_accuracy.json")).unwrap());
    let acc: Vec<String> = Category::ALL.iter().map(|&c| format_percent(t2.guidance_row(c).unwrap().percentage())).collect();
    assert_eq!(acc, ["90.0%", "80.0%", "70.0%", "75.0%", "75.0%", "100.0%"]);
}

// Relay model check.

fn script_end_of_plan() -> Vec<ClientMessage> {
    vec![
        query_msg(2),
        msg(3, ClientBody::Advance { snapshot_id: None }),
        msg(4, ClientBody::Advance { snapshot_id: None }),
        msg(5, ClientBody::Advance { snapshot_id: None }),
        msg(6, ClientBody::Back {}),
        msg(7, ClientBody::GetState {}),
    ]
}

fn script_first_step() -> Vec<ClientMessage> {
    vec![
        query_msg(2),
        msg(3, ClientBody::Back {}),
        msg(4, ClientBody::Advance { snapshot_id: Some("f0".into()) }),
        msg(5, ClientBody::Back {}),
        msg(6, ClientBody::Back {}),
        msg(7, ClientBody::GetState {}),
    ]
}

fn error_codes(r: &RunResult) -> Vec<String> {
    r.replies
        .iter()
        .filter_map(|t| {
            let v: Value = serde_json::from_str(t).unwrap();
            (v["kind"] == "error").then(|| v["payload"]["code"].as_str().unwrap().to_string())
        })
        .collect()
}

fn protocol_model_check() {
    let rt = runtime();
    for (script, codes, final_step) in [
        (script_end_of_plan(), vec!["end_of_plan"], 1),
        (script_first_step(), vec!["at_first_step", "at_first_step"], 0),
    ] {
        let in_order: Vec<usize> = (0..script.len()).collect();
        let reference = rt.block_on(relay_run(&script, &in_order, false));
        assert_eq!(error_codes(&reference), codes);
        let state: Value = serde_json::from_str(reference.replies.last().unwrap()).unwrap();
        assert_eq!(state["payload"]["current_step"], final_step);
        assert_eq!(state["payload"]["step_count"], SYNTHETIC_STEPS);
        for order in permutations(script.len()) {
            let run = rt.block_on(relay_run(&script, &order, true));
            assert!(run == reference, "order {order:?} diverged");
        }
    }
}

// Latency instrumentation.

fn latency_instrumentation() {
    let rt = runtime();
    rt.block_on(async {
        for bundle_id in ["printer-clean", "printer-reset", "kitchen"] {
            let bundle = FixtureBundle::load(&fixtures().join("bundles").join(bundle_id)).unwrap();
            let handler = std::sync::Arc::new(ProtocolHandler::new(
                manager(bundle_compiler(bundle_id)),
                FixtureScenes::new(Some(fixtures().join("bundles"))),
            ));
            let mut conn = handler.connect();
            let mut seq = 0;
            let mut send = |body: ClientBody| {
                seq += 1;
                ClientMessage { session_id: None, seq, body }
            };
            let mut scenes: Vec<&String> = vec![&bundle.manifest.initial_scene];
            scenes.extend(bundle.manifest.steps.iter().map(|s| &s.scene));
            scenes.dedup();
            for s in scenes {
                let up = SnapshotUpload {
                    snapshot_id: s.clone(),
                    scene_ref: Some(format!("{bundle_id}/{s}")),
                    meta: None,
                    image_frame: None,
                    depth_frame: None,
                };
                assert!(conn.on_message(send(ClientBody::Snapshot(up))).await.is_empty());
            }
            let mut replies = conn
                .on_message(send(ClientBody::Query {
                    query: bundle.manifest.query.clone(),
                    snapshot_id: bundle.manifest.initial_scene.clone(),
                }))
                .await;
            for label in bundle.manifest.steps.iter().skip(1) {
                let mut m = send(ClientBody::Advance { snapshot_id: Some(label.scene.clone()) });
                m.session_id = conn.session_id().map(str::to_string);
                replies.extend(conn.on_message(m).await);
            }
            let mut guided = 0;
            for r in &replies {
                match &r.body {
                    ServerBody::GuidanceReady { timing, step_index, .. } => {
                        guided += 1;
                        assert!(timing.total > Duration::ZERO && timing.vision > Duration::ZERO, "{bundle_id} step {step_index}");
                        assert!(timing.geometry > Duration::ZERO, "{bundle_id} step {step_index}: {timing:?}");
                        assert!(timing.total < Duration::from_millis(100), "{bundle_id} step {step_index}: {timing:?}");
                    }
                    ServerBody::PlanReady { .. } => {}
                    other => panic!("{bundle_id}: unexpected reply {other:?}"),
                }
            }
            assert_eq!(guided, bundle.manifest.steps.len());
        }
    });
}

fn main() {
    let criteria: [(&str, fn()); 8] = [
        ("schema suite", schema_suite),
        ("classifier suite", classifier_suite),
        ("geometry suite", geometry_suite),
        ("5 cm particle rule", particle_rule),
        ("golden pipeline", golden_pipeline),
        ("metrics reproduction", metrics_reproduction),
        ("protocol robustness", protocol_model_check),
        ("latency instrumentation", latency_instrumentation),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let took = started.elapsed();
        match result {
            Ok(()) => println!("PASS {name} ({:.2} s)", took.as_secs_f64()),
            Err(e) => {
                failed += 1;
                let why = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
