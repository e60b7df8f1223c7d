//! Offline evaluation: labeled bundles, replay and the result tables.

pub mod bundle;
pub mod metrics;
pub mod replay;
pub mod report;

pub use bundle::{BundleError, BundleManifest, FixtureBundle, StepLabel, BUNDLE_FILE};
pub use metrics::{
    aggregate, format_percent, CallRecord, Category, Component, CountRow, LatencyRow, LatencyStat, MetricsReport, Percent,
    StepOutcome,
};
pub use replay::{ReplayError, Replayer};
pub use report::{from_csv, render_text, to_csv, to_json, ReportError, REPORT_SCHEMA};

/// Reads outcomes from a JSON array.
pub fn load_outcomes(path: &std::path::Path) -> Result<Vec<StepOutcome>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
