//! Text, CSV and JSON renderings of a [`MetricsReport`].

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::metrics::{format_percent, CountRow, LatencyRow, LatencyStat, MetricsReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
}

fn latency_cell(l: &LatencyStat) -> String {
    l.mean_seconds().map(|s| format!("{s:.2}")).unwrap_or_else(|| "-".into())
}

/// Fixed-width tables with a rule between groups.
pub fn render_text(r: &MetricsReport) -> String {
    let mut out = String::new();
    let rule = |w: usize| format!("{}\n", "-".repeat(w));

    let w1 = 50;
    out.push_str(&format!("{:<24}{:>8}{:>9}{:>9}\n", "Plan", "Total", "Correct", "Acc."));
    for group in &r.plan_table {
        out.push_str(&rule(w1));
        for row in group {
            out.push_str(&format!(
                "{:<24}{:>8}{:>9}{:>9}\n",
                row.label,
                row.total,
                row.correct,
                format_percent(row.percentage())
            ));
        }
    }
    out.push_str(&rule(w1));
    out.push('\n');

    let w2 = 64;
    out.push_str(&format!("{:<28}{:>6}{:>9}{:>9}{:>12}\n", "Guidance", "N", "Correct", "Acc.", "Latency(s)"));
    for group in &r.guidance_table {
        out.push_str(&rule(w2));
        for row in group {
            let label = if row.sub_row { format!("  {}", row.label) } else { row.label.clone() };
            out.push_str(&format!(
                "{:<28}{:>6}{:>9}{:>9}{:>12}\n",
                label,
                row.total,
                row.correct,
                format_percent(row.percentage()),
                latency_cell(&row.latency)
            ));
        }
    }
    out.push_str(&rule(w2));
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    table: String,
    group: usize,
    label: String,
    sub_row: bool,
    total: u32,
    correct: u32,
    accuracy: String,
    mean_latency_s: String,
    latency_nanos: u128,
    latency_samples: u32,
}

/// One line per row. The exact latency sum is kept so the file parses
/// back into the same report.
pub fn to_csv(r: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (g, group) in r.plan_table.iter().enumerate() {
        for row in group {
            w.serialize(CsvRow {
                table: "plan".into(),
                group: g,
                label: row.label.clone(),
                sub_row: false,
                total: row.total,
                correct: row.correct,
                accuracy: format_percent(row.percentage()),
                mean_latency_s: String::new(),
                latency_nanos: 0,
                latency_samples: 0,
            })
            .expect("in-memory csv write");
        }
    }
    for (g, group) in r.guidance_table.iter().enumerate() {
        for row in group {
            w.serialize(CsvRow {
                table: "guidance".into(),
                group: g,
                label: row.label.clone(),
                sub_row: row.sub_row,
                total: row.total,
                correct: row.correct,
                accuracy: format_percent(row.percentage()),
                mean_latency_s: latency_cell(&row.latency),
                latency_nanos: row.latency.total_nanos,
                latency_samples: row.latency.samples,
            })
            .expect("in-memory csv write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is UTF-8")
}

pub fn from_csv(text: &str) -> Result<MetricsReport, ReportError> {
    let mut report = MetricsReport { plan_table: Vec::new(), guidance_table: Vec::new() };
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    for (i, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        let rec = rec?;
        let bad = |reason: &str| ReportError::Row { row: i + 1, reason: reason.into() };
        match rec.table.as_str() {
            "plan" => {
                push_grouped(&mut report.plan_table, rec.group, CountRow { label: rec.label, total: rec.total, correct: rec.correct })
                    .map_err(|_| bad("group out of order"))?
            }
            "guidance" => push_grouped(
                &mut report.guidance_table,
                rec.group,
                LatencyRow {
                    label: rec.label,
                    sub_row: rec.sub_row,
                    total: rec.total,
                    correct: rec.correct,
                    latency: LatencyStat { total_nanos: rec.latency_nanos, samples: rec.latency_samples },
                },
            )
            .map_err(|_| bad("group out of order"))?,
            other => return Err(bad(&format!("unknown table {other:?}"))),
        }
    }
    Ok(report)
}

fn push_grouped<T>(groups: &mut Vec<Vec<T>>, group: usize, row: T) -> Result<(), ()> {
    if group == groups.len() {
        groups.push(Vec::new());
    }
    if group + 1 != groups.len() {
        return Err(());
    }
    groups[group].push(row);
    Ok(())
}

/// JSON form, described by `schemas/metrics_report.schema.json`.
pub fn to_json(r: &MetricsReport) -> Value {
    let plan: Vec<Value> = r
        .plan_table
        .iter()
        .map(|g| {
            Value::Array(
                g.iter()
                    .map(|row| {
                        json!({
                            "label": row.label,
                            "total": row.total,
                            "correct": row.correct,
                            "accuracy": row.percentage().map(|p| p.0 as f64 / 10.0),
                        })
                    })
                    .collect(),
            )
        })
        .collect();
    let guidance: Vec<Value> = r
        .guidance_table
        .iter()
        .map(|g| {
            Value::Array(
                g.iter()
                    .map(|row| {
                        json!({
                            "label": row.label,
                            "sub_row": row.sub_row,
                            "total": row.total,
                            "correct": row.correct,
                            "accuracy": row.percentage().map(|p| p.0 as f64 / 10.0),
                            "mean_latency_s": row.latency.mean_seconds(),
                            "latency_samples": row.latency.samples,
                        })
                    })
                    .collect(),
            )
        })
        .collect();
    json!({ "plan_table": plan, "guidance_table": guidance })
}

pub const REPORT_SCHEMA: &str = include_str!("../../schemas/metrics_report.schema.json");
