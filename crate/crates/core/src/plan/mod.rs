//! Structured task plans.
//!
//! A plan document is a JSON object whose top-level `"instructions"` field
//! holds the ordered steps. Each step carries an `instruction`, an integer
//! `visual_type` in `1..=5` and a `key_components` list whose first entry
//! names the interaction target and whose remaining entries carry the
//! payload for that visual type.
//!
//! [`StepDocument`] is the raw, possibly invalid form of a step.
//! [`validate_step`] reports every violated rule for one; [`parse_plan`]
//! turns a whole document into a [`TaskPlan`] of validated [`PlanStep`]s.

mod classifier;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use classifier::{classify_visual_type, ClassifierLexicons, LexiconError, MatchRule, MatchTrace};

/// The five guidance families a step can be rendered with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum VisualType {
    Highlight = 1,
    Movement = 2,
    HandGesture = 3,
    Tool = 4,
    Widget = 5,
}

impl VisualType {
    pub const ALL: [VisualType; 5] = [
        VisualType::Highlight,
        VisualType::Movement,
        VisualType::HandGesture,
        VisualType::Tool,
        VisualType::Widget,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(VisualType::Highlight),
            2 => Some(VisualType::Movement),
            3 => Some(VisualType::HandGesture),
            4 => Some(VisualType::Tool),
            5 => Some(VisualType::Widget),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VisualType::Highlight => "Highlight",
            VisualType::Movement => "Movement",
            VisualType::HandGesture => "Hand Gesture",
            VisualType::Tool => "Tool",
            VisualType::Widget => "Widget",
        }
    }

    /// Number of `key_components` entries a step of this type must carry.
    /// `None` means "at least one".
    pub fn required_arity(self) -> Option<usize> {
        match self {
            VisualType::Highlight => None,
            VisualType::Movement | VisualType::HandGesture | VisualType::Widget => Some(2),
            VisualType::Tool => Some(3),
        }
    }
}

impl TryFrom<i64> for VisualType {
    type Error = String;

    fn try_from(code: i64) -> Result<Self, Self::Error> {
        VisualType::from_code(code).ok_or_else(|| format!("invalid visual type {code}"))
    }
}

impl From<VisualType> for i64 {
    fn from(t: VisualType) -> i64 {
        t as i64
    }
}

impl fmt::Display for VisualType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Lowercases and folds `_`, `-` and runs of whitespace into single spaces.
fn fold_enum_text(s: &str) -> String {
    s.trim()
        .to_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureKind {
    Poke,
    Hook,
    PalmPress,
    Grip,
    CylindricalGrasp,
    Pinch,
}

impl GestureKind {
    pub const ALL: [GestureKind; 6] = [
        GestureKind::Poke,
        GestureKind::Hook,
        GestureKind::PalmPress,
        GestureKind::Grip,
        GestureKind::CylindricalGrasp,
        GestureKind::Pinch,
    ];

    /// Identifier used in asset ids (`gesture/<name>`).
    pub fn name(self) -> &'static str {
        match self {
            GestureKind::Poke => "poke",
            GestureKind::Hook => "hook",
            GestureKind::PalmPress => "palm_press",
            GestureKind::Grip => "grip",
            GestureKind::CylindricalGrasp => "cylindrical_grasp",
            GestureKind::Pinch => "pinch",
        }
    }
}

impl FromStr for GestureKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match fold_enum_text(s).as_str() {
            "poke" => Ok(GestureKind::Poke),
            "hook" => Ok(GestureKind::Hook),
            "palm press" => Ok(GestureKind::PalmPress),
            "grip" => Ok(GestureKind::Grip),
            "cylindrical grasp" => Ok(GestureKind::CylindricalGrasp),
            "pinch" => Ok(GestureKind::Pinch),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolMotion {
    UpAndDown,
    LeftAndRight,
    Rotate,
    Clockwise,
    Counterclockwise,
}

impl ToolMotion {
    pub const ALL: [ToolMotion; 5] = [
        ToolMotion::UpAndDown,
        ToolMotion::LeftAndRight,
        ToolMotion::Rotate,
        ToolMotion::Clockwise,
        ToolMotion::Counterclockwise,
    ];
}

impl FromStr for ToolMotion {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match fold_enum_text(s).as_str() {
            "up and down" => Ok(ToolMotion::UpAndDown),
            "left and right" => Ok(ToolMotion::LeftAndRight),
            "rotate" | "rotation" => Ok(ToolMotion::Rotate),
            "clockwise" => Ok(ToolMotion::Clockwise),
            "counterclockwise" | "counter clockwise" => Ok(ToolMotion::Counterclockwise),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MovementKind {
    Translation,
    Rotation,
}

impl FromStr for MovementKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match fold_enum_text(s).as_str() {
            "translation" => Ok(MovementKind::Translation),
            "rotation" => Ok(MovementKind::Rotation),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("wait duration {0:?} is not mm:ss with both fields in 00..59")]
pub struct PatternError(pub String);

/// Parses a `mm:ss` wait duration into seconds.
pub fn parse_wait_duration(text: &str) -> Result<u32, PatternError> {
    let err = || PatternError(text.to_string());
    let (mm, ss) = text.trim().split_once(':').ok_or_else(err)?;
    let field = |s: &str| -> Result<u32, PatternError> {
        if s.len() != 2 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let v: u32 = s.parse().map_err(|_| err())?;
        if v > 59 {
            return Err(err());
        }
        Ok(v)
    };
    Ok(60 * field(mm)? + field(ss)?)
}

/// Formats seconds back into `mm:ss`.
pub fn format_wait_duration(seconds: u32) -> String {
    format!("{:02}:{:02}", seconds / 60, seconds % 60)
}

/// One violated step rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaViolation {
    pub step_index: usize,
    pub field: String,
    pub reason: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}: {}: {}", self.step_index, self.field, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("malformed plan document: {0}")]
    MalformedDocument(String),
    #[error("plan failed schema validation: {}", join_violations(.0))]
    SchemaViolation(Vec<SchemaViolation>),
}

fn join_violations(v: &[SchemaViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// A step exactly as it appears in a plan document. Nothing is checked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDocument {
    #[serde(default)]
    pub instruction: Value,
    #[serde(default)]
    pub visual_type: Value,
    #[serde(default)]
    pub key_components: Value,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl StepDocument {
    pub fn new(instruction: &str, visual_type: i64, key_components: &[&str]) -> Self {
        StepDocument {
            instruction: Value::from(instruction),
            visual_type: Value::from(visual_type),
            key_components: Value::from(key_components.iter().map(|s| Value::from(*s)).collect::<Vec<_>>()),
            extra: Map::new(),
        }
    }
}

/// The type-specific part of a validated step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepPayload {
    Highlight,
    Movement(MovementKind),
    Gesture(GestureKind),
    Tool { motion: ToolMotion, tool: String },
    Widget { seconds: u32 },
}

/// A validated plan step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub instruction: String,
    pub visual_type: VisualType,
    pub key_components: Vec<String>,
    pub payload: StepPayload,
    /// Unknown fields from the source document, kept for round-tripping.
    pub extra: Map<String, Value>,
}

impl PlanStep {
    /// The interaction target description (`key_components[0]`).
    pub fn target(&self) -> &str {
        &self.key_components[0]
    }

    pub fn to_document(&self) -> StepDocument {
        StepDocument {
            instruction: Value::from(self.instruction.clone()),
            visual_type: Value::from(self.visual_type.code()),
            key_components: Value::from(self.key_components.clone()),
            extra: self.extra.clone(),
        }
    }

    /// Validates a raw step; `Err` carries every violation found.
    pub fn from_document(index: usize, doc: &StepDocument) -> Result<PlanStep, Vec<SchemaViolation>> {
        let mut checker = StepChecker::new(index);
        match checker.check(doc) {
            Some(step) if checker.violations.is_empty() => Ok(step),
            _ => Err(checker.violations),
        }
    }
}

impl Serialize for PlanStep {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

/// Returns every rule the step violates. Empty means valid.
pub fn validate_step(step: &StepDocument) -> Vec<SchemaViolation> {
    validate_step_at(0, step)
}

pub fn validate_step_at(index: usize, step: &StepDocument) -> Vec<SchemaViolation> {
    let mut checker = StepChecker::new(index);
    checker.check(step);
    checker.violations
}

/// Blank-after-trim text counts as absent.
fn non_blank(v: &Value) -> Option<&str> {
    v.as_str().map(str::trim).filter(|s| !s.is_empty())
}

struct StepChecker {
    index: usize,
    violations: Vec<SchemaViolation>,
}

impl StepChecker {
    fn new(index: usize) -> Self {
        StepChecker { index, violations: Vec::new() }
    }

    fn push(&mut self, field: impl Into<String>, reason: impl Into<String>) {
        self.violations.push(SchemaViolation {
            step_index: self.index,
            field: field.into(),
            reason: reason.into(),
        });
    }

    fn check(&mut self, doc: &StepDocument) -> Option<PlanStep> {
        let instruction = match non_blank(&doc.instruction) {
            Some(s) => Some(s.to_string()),
            None => {
                self.push("instruction", "missing or blank");
                None
            }
        };

        let visual_type = match doc.visual_type.as_i64() {
            Some(code) => match VisualType::from_code(code) {
                Some(t) => Some(t),
                None => {
                    self.push("visual_type", format!("invalid VisualType {code}, expected 1..5"));
                    None
                }
            },
            None => {
                self.push("visual_type", format!("expected an integer, got {}", doc.visual_type));
                None
            }
        };

        let components: Option<Vec<Option<String>>> = match &doc.key_components {
            Value::Array(items) => Some(items.iter().map(|v| non_blank(v).map(str::to_string)).collect()),
            other => {
                self.push("key_components", format!("expected a list, got {other}"));
                None
            }
        };
        let components = components?;

        if components.is_empty() {
            self.push("key_components", "arity: expected at least 1 entry, got 0");
        } else if components[0].is_none() {
            self.push("key_components[0]", "interaction target must be non-blank text");
        }

        let visual_type = visual_type?;
        let payload = self.check_payload(visual_type, &components);

        let (instruction, payload) = (instruction?, payload?);
        if !self.violations.is_empty() {
            return None;
        }
        Some(PlanStep {
            instruction,
            visual_type,
            key_components: components.into_iter().map(Option::unwrap_or_default).collect(),
            payload,
            extra: doc.extra.clone(),
        })
    }

    fn check_payload(&mut self, visual_type: VisualType, components: &[Option<String>]) -> Option<StepPayload> {
        if let Some(required) = visual_type.required_arity() {
            if components.len() != required {
                // An empty list was already reported above.
                if !components.is_empty() {
                    self.push(
                        "key_components",
                        format!(
                            "arity: visual_type {} requires exactly {required} entries, got {}",
                            visual_type.code(),
                            components.len()
                        ),
                    );
                }
                return None;
            }
        } else {
            return (!components.is_empty()).then_some(StepPayload::Highlight);
        }

        let entry = |i: usize| components[i].as_deref().unwrap_or("");
        match visual_type {
            VisualType::Highlight => Some(StepPayload::Highlight),
            VisualType::Movement => match entry(1).parse() {
                Ok(kind) => Some(StepPayload::Movement(kind)),
                Err(()) => {
                    self.push("key_components[1]", format!("invalid MovementKind {:?}", entry(1)));
                    None
                }
            },
            VisualType::HandGesture => match entry(1).parse() {
                Ok(kind) => Some(StepPayload::Gesture(kind)),
                Err(()) => {
                    self.push("key_components[1]", format!("invalid GestureKind {:?}", entry(1)));
                    None
                }
            },
            VisualType::Tool => {
                let motion = entry(1).parse::<ToolMotion>();
                if motion.is_err() {
                    self.push("key_components[1]", format!("invalid ToolMotion {:?}", entry(1)));
                }
                let tool = components[2].clone();
                if tool.is_none() {
                    self.push("key_components[2]", "tool name must be non-blank text");
                }
                Some(StepPayload::Tool { motion: motion.ok()?, tool: tool? })
            }
            VisualType::Widget => match parse_wait_duration(entry(1)) {
                Ok(seconds) => Some(StepPayload::Widget { seconds }),
                Err(_) => {
                    self.push("key_components[1]", format!("not mm:ss: {:?}", entry(1)));
                    None
                }
            },
        }
    }
}

/// A validated, non-empty, ordered plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskPlan {
    #[serde(rename = "instructions")]
    pub steps: Vec<PlanStep>,
    #[serde(skip)]
    pub source_query: String,
    #[serde(rename = "device_brand", skip_serializing_if = "Option::is_none")]
    pub device_hint: Option<String>,
}

impl TaskPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serialization is infallible")
    }
}

/// Parses a plan document.
///
/// Validation stops at the first violation of each step but continues
/// across steps, so the error lists at most one violation per step.
pub fn parse_plan(document: &str) -> Result<TaskPlan, PlanError> {
    let value: Value = serde_json::from_str(document).map_err(|e| PlanError::MalformedDocument(e.to_string()))?;
    plan_from_value(&value)
}

pub fn plan_from_value(value: &Value) -> Result<TaskPlan, PlanError> {
    let object = value
        .as_object()
        .ok_or_else(|| PlanError::MalformedDocument("top level is not an object".into()))?;
    let items = object
        .get("instructions")
        .and_then(Value::as_array)
        .ok_or_else(|| PlanError::MalformedDocument("missing top-level \"instructions\" list".into()))?;
    if items.is_empty() {
        return Err(PlanError::SchemaViolation(vec![SchemaViolation {
            step_index: 0,
            field: "instructions".into(),
            reason: "plan has no steps".into(),
        }]));
    }

    let mut steps = Vec::with_capacity(items.len());
    let mut violations = Vec::new();
    for (index, item) in items.iter().enumerate() {
        let doc: StepDocument = match serde_json::from_value(item.clone()) {
            Ok(doc) => doc,
            Err(e) => {
                violations.push(SchemaViolation {
                    step_index: index,
                    field: "step".into(),
                    reason: format!("not an object: {e}"),
                });
                continue;
            }
        };
        match PlanStep::from_document(index, &doc) {
            Ok(step) => steps.push(step),
            Err(mut v) => violations.push(v.remove(0)),
        }
    }
    if !violations.is_empty() {
        return Err(PlanError::SchemaViolation(violations));
    }

    let device_hint = object.get("device_brand").and_then(non_blank).map(str::to_string);
    Ok(TaskPlan { steps, source_query: String::new(), device_hint })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn step(v: Value) -> StepDocument {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn widget_example_parses_with_thirty_seconds() {
        let doc = json!({"instructions": [
            {"instruction": "Let the food stand for 30s", "visual_type": 5, "key_components": ["Mixing bowl", "00:30"]}
        ]});
        let plan = parse_plan(&doc.to_string()).unwrap();
        assert_eq!(plan.steps[0].payload, StepPayload::Widget { seconds: 30 });
    }

    #[test]
    fn widget_without_colon_is_rejected_on_second_component() {
        let doc = json!({"instructions": [
            {"instruction": "Let the food stand for 30s", "visual_type": 5, "key_components": ["Mixing bowl", "30"]}
        ]});
        match parse_plan(&doc.to_string()) {
            Err(PlanError::SchemaViolation(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].field, "key_components[1]");
                assert!(v[0].reason.contains("mm:ss"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tool_example_is_valid() {
        let s = step(json!({"instruction": "Mix the ingredients with a whisk", "visual_type": 4, "key_components": ["Mixing bowl", "rotate", "whisk"]}));
        assert!(validate_step(&s).is_empty());
        let parsed = PlanStep::from_document(0, &s).unwrap();
        assert_eq!(parsed.payload, StepPayload::Tool { motion: ToolMotion::Rotate, tool: "whisk".into() });
    }

    #[test]
    fn gesture_validation() {
        let ok = step(json!({"instruction": "Pull the filament out", "visual_type": 3, "key_components": ["filament on top of nozzle", "pinch"]}));
        assert!(validate_step(&ok).is_empty());

        let bad = step(json!({"instruction": "Pull the filament out", "visual_type": 3, "key_components": ["filament on top of nozzle", "twist"]}));
        let v = validate_step(&bad);
        assert_eq!(v.len(), 1);
        assert!(v[0].reason.contains("invalid GestureKind"));
    }

    #[test]
    fn visual_type_six_is_invalid() {
        let bad = step(json!({"instruction": "x", "visual_type": 6, "key_components": ["a"]}));
        let v = validate_step(&bad);
        assert_eq!(v[0].field, "visual_type");
        assert!(v[0].reason.contains("invalid VisualType"));
    }

    #[test]
    fn validate_reports_every_violation() {
        let bad = step(json!({"instruction": "  ", "visual_type": 4, "key_components": ["", "sideways", " "]}));
        let fields: Vec<_> = validate_step(&bad).into_iter().map(|v| v.field).collect();
        assert_eq!(fields, ["instruction", "key_components[0]", "key_components[1]", "key_components[2]"]);
    }

    #[test]
    fn parse_collects_one_violation_per_step() {
        let doc = json!({"instructions": [
            {"instruction": "", "visual_type": 9, "key_components": []},
            {"instruction": "ok", "visual_type": 1, "key_components": ["Button"]},
            {"instruction": "wait", "visual_type": 5, "key_components": ["Oven", "1:30"]}
        ]});
        match parse_plan(&doc.to_string()) {
            Err(PlanError::SchemaViolation(v)) => {
                assert_eq!(v.iter().map(|x| x.step_index).collect::<Vec<_>>(), [0, 2]);
                assert_eq!(v[0].field, "instruction");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(parse_plan("{not json"), Err(PlanError::MalformedDocument(_))));
        assert!(matches!(parse_plan(r#"{"steps": []}"#), Err(PlanError::MalformedDocument(_))));
        assert!(matches!(parse_plan(r#"{"instructions": []}"#), Err(PlanError::SchemaViolation(_))));
    }

    #[test]
    fn unknown_fields_survive_round_trip() {
        let doc = json!({"instructions": [
            {"instruction": "press start button on the rice cooker", "visual_type": 1,
             "key_components": ["The orange Start button", "extra detail"], "confidence": 0.9}
        ]});
        let plan = parse_plan(&doc.to_string()).unwrap();
        assert_eq!(plan.steps[0].extra["confidence"], json!(0.9));
        let again = parse_plan(&plan.to_json()).unwrap();
        assert_eq!(plan, again);
    }

    #[test]
    fn wait_durations() {
        assert_eq!(parse_wait_duration("00:30"), Ok(30));
        assert_eq!(parse_wait_duration("00:00"), Ok(0));
        assert_eq!(parse_wait_duration("01:30"), Ok(90));
        assert_eq!(parse_wait_duration("59:59"), Ok(3599));
        for bad in ["30", "60:00", "00:60", "1:30", "ab:cd", "00:5", "", "00:30:00", "-1:30"] {
            assert!(parse_wait_duration(bad).is_err(), "{bad}");
        }
        assert_eq!(format_wait_duration(90), "01:30");
    }

    #[test]
    fn enum_text_variants() {
        assert_eq!("Palm Press".parse(), Ok(GestureKind::PalmPress));
        assert_eq!("cylindrical_grasp".parse(), Ok(GestureKind::CylindricalGrasp));
        assert_eq!("counter clockwise".parse(), Ok(ToolMotion::Counterclockwise));
        assert_eq!("up and down".parse(), Ok(ToolMotion::UpAndDown));
        assert!("wave".parse::<GestureKind>().is_err());
        assert!("spin".parse::<MovementKind>().is_err());
    }
}
