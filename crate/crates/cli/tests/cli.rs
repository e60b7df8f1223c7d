use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn arguide(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arguide")).args(args).env("RUST_BACKTRACE", "0").output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn replay_aggregate_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let outcomes = dir.path().join("outcomes.json");
    let csv = dir.path().join("report.csv");
    let bundles = fixtures().join("bundles");
    stdout(&arguide(&["replay", bundles.to_str().unwrap(), "-o", outcomes.to_str().unwrap()]));
    stdout(&arguide(&["aggregate", outcomes.to_str().unwrap(), "--format", "csv", "-o", csv.to_str().unwrap()]));
    let text = stdout(&arguide(&["report", csv.to_str().unwrap()]));
    assert!(text.contains("Text Instruction"));
    let json: serde_json::Value = serde_json::from_str(&stdout(&arguide(&["report", csv.to_str().unwrap(), "--format", "json"]))).unwrap();
    assert_eq!(json["plan_table"][0][0]["accuracy"], 100.0);
}

#[test]
fn labeled_outcomes_render_the_plan_table() {
    let text = stdout(&arguide(&["aggregate", fixtures().join("outcomes/plan_accuracy.json").to_str().unwrap()]));
    let total = text.lines().find(|l| l.starts_with("Total")).unwrap();
    assert!(total.ends_with("65.0%"), "{total}");
}

#[test]
fn plan_validate_reports_violations() {
    let ok = stdout(&arguide(&["plan", "validate", fixtures().join("bundles/kitchen/plan.json").to_str().unwrap()]));
    assert!(ok.starts_with("ok: "));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"instructions":[{"instruction":"x","visual_type":9,"key_components":[]}]}"#).unwrap();
    let o = arguide(&["plan", "validate", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("visual_type"));
}

#[test]
fn classify_names_the_rule() {
    let out = stdout(&arguide(&["classify", "Wait 30 seconds for the nozzle to cool"]));
    assert!(out.starts_with("Widget (5)"), "{out}");
}

#[test]
fn compile_prints_a_scene_graph() {
    let out = stdout(&arguide(&["compile", fixtures().join("bundles/kitchen").to_str().unwrap(), "--step", "2"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["scene"]["step_index"], 2);
}

#[test]
fn serve_needs_a_provider() {
    let o = arguide(&["serve"]);
    assert!(!o.status.success());
}
