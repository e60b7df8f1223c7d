//! Step outcomes and their aggregation into the two result tables.
//!
//! The plan table has three groups: plan-field rows over every step,
//! per-type guidance rows over steps whose plan was fully correct, and the
//! end-to-end total. The guidance table has one group per category, a type
//! row followed by component sub-rows, each with accuracy and mean latency.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::compiler::{PrimitiveKind, StepTiming};
use crate::plan::{MovementKind, VisualType};
use crate::vision::Capability;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Highlight,
    TranslationalMovement,
    RotationalMovement,
    HandGesture,
    Tool,
    Widget,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Highlight,
        Category::TranslationalMovement,
        Category::RotationalMovement,
        Category::HandGesture,
        Category::Tool,
        Category::Widget,
    ];

    /// Movement without a known kind counts as translational.
    pub fn of(t: VisualType, movement: Option<MovementKind>) -> Self {
        match t {
            VisualType::Highlight => Category::Highlight,
            VisualType::Movement => match movement {
                Some(MovementKind::Rotation) => Category::RotationalMovement,
                _ => Category::TranslationalMovement,
            },
            VisualType::HandGesture => Category::HandGesture,
            VisualType::Tool => Category::Tool,
            VisualType::Widget => Category::Widget,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Highlight => "Highlight",
            Category::TranslationalMovement => "Translational Movement",
            Category::RotationalMovement => "Rotational Movement",
            Category::HandGesture => "Hand Gesture",
            Category::Tool => "Tool",
            Category::Widget => "Widget",
        }
    }

    /// Component sub-rows, in table order.
    pub fn components(self) -> &'static [Component] {
        use Component::*;
        match self {
            Category::Highlight | Category::Widget => &[Bbox],
            Category::TranslationalMovement => &[Bbox, EndPosition, Segmentation],
            Category::RotationalMovement => &[Bbox, RotationInfo, Segmentation],
            Category::HandGesture => &[Bbox, GestureType, Placement],
            Category::Tool => &[Bbox, ToolGen],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Bbox,
    EndPosition,
    Segmentation,
    RotationInfo,
    GestureType,
    Placement,
    ToolGen,
}

impl Component {
    pub fn label(self) -> &'static str {
        match self {
            Component::Bbox => "2D Box",
            Component::EndPosition => "End Position",
            Component::Segmentation => "Segmentation",
            Component::RotationInfo => "Rotation Info",
            Component::GestureType => "Type",
            Component::Placement => "Placement",
            Component::ToolGen => "Tool Gen",
        }
    }

    /// The component a provider call is timed under. A translation call
    /// returns the box and the end position together and is timed as the box.
    pub fn of_call(c: Capability) -> Option<Self> {
        match c {
            Capability::Plan => None,
            Capability::Bbox | Capability::Translation => Some(Component::Bbox),
            Capability::Rotation => Some(Component::RotationInfo),
            Capability::Segmentation => Some(Component::Segmentation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub component: Component,
    pub seconds: f64,
}

/// Result of one labeled step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepOutcome {
    pub bundle_id: String,
    pub step_index: usize,
    pub expected_type: VisualType,
    pub category: Category,
    pub instruction_correct: bool,
    pub type_correct: bool,
    pub component_correct: bool,
    pub guidance_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub components: BTreeMap<Component, bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kinds: Vec<PrimitiveKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<StepTiming>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<CallRecord>,
}

impl StepOutcome {
    pub fn plan_correct(&self) -> bool {
        self.instruction_correct && self.type_correct && self.component_correct
    }

    pub fn end_to_end(&self) -> bool {
        self.overall_correct.unwrap_or(self.plan_correct() && self.guidance_correct)
    }
}

/// A percentage in tenths of a percent, rounded half up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Percent(pub u32);

impl Percent {
    pub fn of(correct: u32, total: u32) -> Option<Self> {
        (total > 0).then(|| {
            let (c, t) = (correct as u64, total as u64);
            Percent(((2000 * c + t) / (2 * t)) as u32)
        })
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}%", self.0 / 10, self.0 % 10)
    }
}

pub fn format_percent(p: Option<Percent>) -> String {
    p.map(|p| p.to_string()).unwrap_or_else(|| "n/a".into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountRow {
    pub label: String,
    pub total: u32,
    pub correct: u32,
}

impl CountRow {
    pub fn percentage(&self) -> Option<Percent> {
        Percent::of(self.correct, self.total)
    }
}

/// Mean over `samples` durations, kept as an exact nanosecond sum so the
/// result does not depend on the order samples were added in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LatencyStat {
    pub total_nanos: u128,
    pub samples: u32,
}

impl LatencyStat {
    pub fn add(&mut self, d: Duration) {
        self.total_nanos += d.as_nanos();
        self.samples += 1;
    }

    pub fn mean_seconds(&self) -> Option<f64> {
        (self.samples > 0).then(|| (self.total_nanos as f64 / self.samples as f64) / 1e9)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyRow {
    pub label: String,
    /// Component sub-row rather than a type row.
    pub sub_row: bool,
    pub total: u32,
    pub correct: u32,
    pub latency: LatencyStat,
}

impl LatencyRow {
    pub fn percentage(&self) -> Option<Percent> {
        Percent::of(self.correct, self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsReport {
    /// Groups separated by rules: plan fields, per-type rows, total.
    pub plan_table: Vec<Vec<CountRow>>,
    /// One group per category: the type row then its component rows.
    pub guidance_table: Vec<Vec<LatencyRow>>,
}

impl MetricsReport {
    pub fn row(&self, label: &str) -> Option<&CountRow> {
        self.plan_table.iter().flatten().find(|r| r.label == label)
    }

    pub fn guidance_row(&self, category: Category) -> Option<&LatencyRow> {
        self.guidance_table.iter().filter_map(|g| g.first()).find(|r| r.label == category.label())
    }

    /// Same report with every latency cleared, for byte comparisons.
    pub fn without_latency(&self) -> Self {
        let mut r = self.clone();
        for row in r.guidance_table.iter_mut().flatten() {
            row.latency = LatencyStat::default();
        }
        r
    }
}

/// Folds outcomes into a report. Independent of input order.
pub fn aggregate(outcomes: &[StepOutcome]) -> MetricsReport {
    let n = outcomes.len() as u32;
    let count = |f: &dyn Fn(&StepOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as u32;
    let fields = vec![
        CountRow { label: "Text Instruction".into(), total: n, correct: count(&|o| o.instruction_correct) },
        CountRow { label: "Visual Type".into(), total: n, correct: count(&|o| o.type_correct) },
        CountRow { label: "Key Component".into(), total: n, correct: count(&|o| o.component_correct) },
    ];
    let per_type = VisualType::ALL
        .iter()
        .map(|&t| {
            let scoped = |o: &StepOutcome| o.expected_type == t && o.plan_correct();
            CountRow {
                label: t.label().into(),
                total: count(&|o| scoped(o)),
                correct: count(&|o| scoped(o) && o.guidance_correct),
            }
        })
        .collect();
    let total = vec![CountRow { label: "Total".into(), total: n, correct: count(&|o| o.end_to_end()) }];

    let guidance_table = Category::ALL
        .iter()
        .filter_map(|&c| {
            let in_cat: Vec<&StepOutcome> = outcomes.iter().filter(|o| o.category == c).collect();
            if in_cat.is_empty() {
                return None;
            }
            let mut head = LatencyRow {
                label: c.label().into(),
                sub_row: false,
                total: in_cat.len() as u32,
                correct: in_cat.iter().filter(|o| o.guidance_correct).count() as u32,
                latency: LatencyStat::default(),
            };
            for o in &in_cat {
                if let Some(t) = &o.timing {
                    head.latency.add(t.total);
                }
            }
            let mut group = vec![head];
            for &comp in c.components() {
                let mut row = LatencyRow { label: comp.label().into(), sub_row: true, total: 0, correct: 0, latency: LatencyStat::default() };
                for o in &in_cat {
                    if let Some(&ok) = o.components.get(&comp) {
                        row.total += 1;
                        row.correct += ok as u32;
                    }
                    for call in o.calls.iter().filter(|k| k.component == comp) {
                        row.latency.add(Duration::from_secs_f64(call.seconds.max(0.0)));
                    }
                }
                if row.total > 0 && row.total < group[0].total {
                    row.label = format!("{} (N={})", row.label, row.total);
                }
                group.push(row);
            }
            Some(group)
        })
        .collect();

    MetricsReport { plan_table: vec![fields, per_type, total], guidance_table }
}
