//! Labeled scene bundles.
//!
//! ```text
//! <bundle>/bundle.json        manifest and per-step labels
//! <bundle>/plan.json          reference plan; also the mock planner's reply
//! <bundle>/provider.json      mock provider replies (see the vision module)
//! <bundle>/scenes/<id>/       meta.json, color.png, depth.f32
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::metrics::{Category, Component};
use crate::compiler::PrimitiveKind;
use crate::plan::{parse_plan, MovementKind, TaskPlan, VisualType};
use crate::scene::SceneSnapshot;

pub const BUNDLE_FILE: &str = "bundle.json";

/// A bundle-format problem, located by file and field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{file}: {field}: {reason}")]
pub struct BundleError {
    pub file: PathBuf,
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepLabel {
    pub scene: String,
    pub expected_visual_type: VisualType,
    pub expected_key_component: String,
    /// Human verdict on the generated instruction text.
    pub instruction_correct: bool,
    /// Human verdict on the rendered guidance.
    pub guidance_correct: bool,
    /// Human end-to-end verdict, when it differs from the conjunction of
    /// the plan fields and the guidance verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_kinds: Option<Vec<PrimitiveKind>>,
    /// Required for movement steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub movement: Option<MovementKind>,
    /// Per-component verdicts for the guidance breakdown.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub components: BTreeMap<Component, bool>,
}

impl StepLabel {
    pub fn category(&self) -> Category {
        Category::of(self.expected_visual_type, self.movement)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub bundle_id: String,
    pub query: String,
    pub initial_scene: String,
    /// Reference plan document, relative to the bundle directory.
    pub plan: String,
    pub steps: Vec<StepLabel>,
}

#[derive(Debug, Clone)]
pub struct FixtureBundle {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
    pub reference_plan: TaskPlan,
    pub scenes: BTreeMap<String, SceneSnapshot>,
}

impl FixtureBundle {
    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let file = dir.join(BUNDLE_FILE);
        let err = |file: &Path, field: &str, reason: String| BundleError { file: file.to_path_buf(), field: field.into(), reason };
        let text = std::fs::read_to_string(&file).map_err(|e| err(&file, "-", e.to_string()))?;
        let raw: Value = serde_json::from_str(&text).map_err(|e| err(&file, "-", e.to_string()))?;
        let obj = raw.as_object().ok_or_else(|| err(&file, "-", "top level is not an object".into()))?;

        // Labels are decoded one by one so errors name the step.
        let steps_raw = obj.get("steps").and_then(Value::as_array).ok_or_else(|| err(&file, "steps", "missing list".into()))?;
        let mut steps = Vec::with_capacity(steps_raw.len());
        for (i, s) in steps_raw.iter().enumerate() {
            let field = format!("steps[{i}]");
            let label: StepLabel = serde_json::from_value(s.clone()).map_err(|e| err(&file, &field, e.to_string()))?;
            if label.expected_visual_type == VisualType::Movement && label.movement.is_none() {
                return Err(err(&file, &format!("{field}.movement"), "required for movement steps".into()));
            }
            if label.expected_key_component.trim().is_empty() {
                return Err(err(&file, &format!("{field}.expected_key_component"), "blank".into()));
            }
            steps.push(label);
        }
        let mut header = obj.clone();
        header.insert("steps".into(), Value::Array(Vec::new()));
        let mut manifest: BundleManifest = serde_json::from_value(Value::Object(header)).map_err(|e| err(&file, "-", e.to_string()))?;
        manifest.steps = steps;

        let plan_file = dir.join(&manifest.plan);
        let plan_text = std::fs::read_to_string(&plan_file).map_err(|e| err(&plan_file, "-", e.to_string()))?;
        let mut reference_plan = parse_plan(&plan_text).map_err(|e| err(&plan_file, "instructions", e.to_string()))?;
        reference_plan.source_query = manifest.query.clone();
        if reference_plan.len() != manifest.steps.len() {
            return Err(err(
                &file,
                "steps",
                format!("{} labels for a {}-step reference plan", manifest.steps.len(), reference_plan.len()),
            ));
        }

        let mut scenes = BTreeMap::new();
        let names = std::iter::once(&manifest.initial_scene).chain(manifest.steps.iter().map(|s| &s.scene));
        for name in names {
            if scenes.contains_key(name) {
                continue;
            }
            let scene_dir = dir.join("scenes").join(name);
            let snap = SceneSnapshot::load(&scene_dir).map_err(|e| err(&scene_dir, "scene", e.to_string()))?;
            scenes.insert(name.clone(), snap);
        }
        Ok(FixtureBundle { dir: dir.to_path_buf(), manifest, reference_plan, scenes })
    }

    /// Every bundle directly under `root`, sorted by directory name.
    pub fn load_all(root: &Path) -> Result<Vec<Self>, BundleError> {
        let entries = std::fs::read_dir(root)
            .map_err(|e| BundleError { file: root.to_path_buf(), field: "-".into(), reason: e.to_string() })?;
        let mut dirs: Vec<PathBuf> = entries.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.join(BUNDLE_FILE).is_file()).collect();
        dirs.sort();
        dirs.iter().map(|d| Self::load(d)).collect()
    }

    pub fn id(&self) -> &str {
        &self.manifest.bundle_id
    }

    pub fn initial(&self) -> &SceneSnapshot {
        &self.scenes[&self.manifest.initial_scene]
    }

    pub fn scene_for_step(&self, i: usize) -> &SceneSnapshot {
        &self.scenes[&self.manifest.steps[i].scene]
    }
}
