//! Machine-readable run reports, radar charts and report comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eval::{CalibrationPoint, EvalConfig, Evaluation, SampleCounts, SampleRecord};
use crate::explain::{MethodConfig, MethodId};
use crate::protocols::ProtocolScores;
use crate::{Error, Result};

/// `major.minor`; readers reject other majors.
pub const REPORT_SCHEMA_VERSION: &str = "1.0";
const SCHEMA_MAJOR: u32 = 1;

/// Radar axes in display order.
pub const RADAR_AXES: [&str; 8] = ["A", "BI", "CSDC", "PC", "DC", "D", "SD", "TS"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub tool_version: String,
    pub dataset: Option<String>,
    pub dataset_hash: Option<String>,
    pub model: String,
    pub method: MethodId,
    pub method_config: MethodConfig,
    pub eval_config: EvalConfig,
    pub seed: u64,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSection {
    pub prepare_secs: f64,
    pub calibrate_secs: f64,
    pub score_secs: f64,
    pub total_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub run: RunInfo,
    pub scores: ProtocolScores,
    pub threshold: f64,
    pub calibration: Vec<CalibrationPoint>,
    pub counts: SampleCounts,
    pub records: Vec<SampleRecord>,
    /// Wall-clock figures; never part of the canonical body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingSection>,
}

impl Report {
    pub fn new(run: RunInfo, eval: Evaluation) -> Report {
        let t = &eval.timing;
        Report {
            schema_version: REPORT_SCHEMA_VERSION.into(),
            run,
            scores: eval.scores,
            threshold: eval.threshold,
            calibration: eval.calibration,
            counts: eval.counts,
            records: eval.records,
            timing: Some(TimingSection {
                prepare_secs: t.prepare_secs,
                calibrate_secs: t.calibrate_secs,
                score_secs: t.score_secs,
                total_secs: t.prepare_secs + t.calibrate_secs + t.score_secs,
            }),
        }
    }

    /// Pretty JSON without the timing section; byte-stable for a fixed run.
    pub fn canonical_json(&self) -> Result<String> {
        let body = Report {
            timing: None,
            ..self.clone()
        };
        serde_json::to_string_pretty(&body).map_err(|e| Error::json("report", e))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("report", e))
    }

    pub fn from_json(text: &str) -> Result<Report> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::json("report", e))?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Format("report lacks schema_version".into()))?;
        let major: u32 = version
            .split('.')
            .next()
            .and_then(|m| m.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad report schema version `{version}`")))?;
        if major != SCHEMA_MAJOR {
            return Err(Error::Format(format!(
                "report schema {version} is not supported (expected {SCHEMA_MAJOR}.x)"
            )));
        }
        serde_json::from_value(value).map_err(|e| Error::json("report", e))
    }

    pub fn axis_values(&self) -> [f64; 8] {
        axis_values(&self.scores)
    }
}

pub fn axis_values(s: &ProtocolScores) -> [f64; 8] {
    [s.A, s.BI, s.CSDC, s.PC, s.DC, s.D, s.SD, s.TS]
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG 1.1 radar chart, one polygon per series, with each
/// series' mX printed in the center.
pub fn radar_svg(series: &[(String, ProtocolScores)]) -> String {
    let (size, cx, cy, r) = (480.0, 240.0, 250.0, 170.0);
    let n = RADAR_AXES.len();
    let point = |i: usize, v: f64| {
        let a = -std::f64::consts::FRAC_PI_2 + i as f64 * 2.0 * std::f64::consts::PI / n as f64;
        (
            cx + r * v.clamp(0.0, 1.0) * a.cos(),
            cy + r * v.clamp(0.0, 1.0) * a.sin(),
        )
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{h}" viewBox="0 0 {size} {h}">"#,
        h = size + 20.0 * series.len() as f64
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..n)
            .map(|i| point(i, ring))
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polygon points="{}" fill="none" stroke="#cccccc" stroke-width="1"/>"##,
            pts.join(" ")
        );
    }
    for (i, name) in RADAR_AXES.iter().enumerate() {
        let (x, y) = point(i, 1.0);
        let (lx, ly) = point(i, 1.13);
        let _ = writeln!(
            svg,
            r##"<line x1="{cx}" y1="{cy}" x2="{x:.2}" y2="{y:.2}" stroke="#999999" stroke-width="1"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{lx:.2}" y="{ly:.2}" font-family="sans-serif" font-size="14" text-anchor="middle" dominant-baseline="middle">{name}</text>"#
        );
    }
    for (k, (label, scores)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = axis_values(scores)
            .iter()
            .enumerate()
            .map(|(i, &v)| point(i, v))
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ty = cy - 10.0 * (series.len() as f64 - 1.0) + 20.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{cx}" y="{ty:.2}" font-family="sans-serif" font-size="16" font-weight="bold" fill="{color}" text-anchor="middle" dominant-baseline="middle">{:.2}</text>"#,
            scores.mX
        );
        let _ = writeln!(
            svg,
            r#"<text x="20" y="{:.2}" font-family="sans-serif" font-size="13" fill="{color}">{} (mX {:.3})</text>"#,
            size + 20.0 * k as f64,
            escape(label),
            scores.mX
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Side-by-side metric table; columns after the first report show deltas
/// against it. Also returns warnings for reports on different datasets.
pub fn compare_reports(reports: &[(String, Report)]) -> (String, Vec<String>) {
    let mut warnings = Vec::new();
    if let Some((first_name, first)) = reports.first() {
        for (name, r) in &reports[1..] {
            if r.run.dataset_hash != first.run.dataset_hash {
                warnings.push(format!(
                    "warning: {name} was evaluated on a different dataset than {first_name} (manifest hashes differ)"
                ));
            }
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<6}", "metric");
    for (i, (name, _)) in reports.iter().enumerate() {
        let _ = write!(out, " {:>14}", truncate(name, 14));
        if i > 0 {
            let _ = write!(out, " {:>8}", "delta");
        }
    }
    out.push('\n');
    let rows = reports
        .first()
        .map(|(_, r)| r.scores.fields().len())
        .unwrap_or(0);
    for row in 0..rows {
        let key = reports[0].1.scores.fields()[row].0;
        let base = reports[0].1.scores.fields()[row].1;
        let _ = write!(out, "{key:<6}");
        for (i, (_, r)) in reports.iter().enumerate() {
            let v = r.scores.fields()[row].1;
            let _ = write!(out, " {v:>14.4}");
            if i > 0 {
                let _ = write!(out, " {:>+8.4}", v - base);
            }
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<6}", "t*");
    for (i, (_, r)) in reports.iter().enumerate() {
        let _ = write!(out, " {:>14}", r.threshold);
        if i > 0 {
            let _ = write!(out, " {:>8}", "");
        }
    }
    out.push('\n');
    (out, warnings)
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        s.chars().take(n).collect()
    }
}
