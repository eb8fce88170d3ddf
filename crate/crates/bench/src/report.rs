//! JSON and CSV emission.
//!
//! The JSON report carries every sample, op count and reconcile margin and
//! is versioned by `schema_version`. The CSV report has one summary row per
//! variant with the columns in [`CSV_HEADER`]; times are milliseconds with
//! microsecond resolution.

use std::fs;
use std::path::Path;

use crate::error::{BenchError, Result};
use crate::harness::{BenchReport, Stage};

pub const CSV_HEADER: [&str; 16] = [
    "variant",
    "height",
    "width",
    "channels",
    "threads",
    "thread_count",
    "scenes",
    "median_site_density",
    "feature_net_mean_ms",
    "feature_net_std_ms",
    "backbone_mean_ms",
    "backbone_std_ms",
    "head_mean_ms",
    "head_std_ms",
    "total_mean_ms",
    "total_std_ms",
];

/// Columns holding wall-clock values.
pub const TIMING_COLUMNS: std::ops::Range<usize> = 8..16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn to_json(report: &BenchReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> std::result::Result<BenchReport, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn to_csv(report: &BenchReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for v in &report.variants {
        let mut row = vec![
            v.variant.tag().to_string(),
            v.height.to_string(),
            v.width.to_string(),
            v.channels.to_string(),
            v.threads.tag().to_string(),
            v.thread_count.to_string(),
            v.scenes.len().to_string(),
            v.median_site_density.to_string(),
        ];
        for stage in Stage::ALL {
            let t = v.stage(stage);
            row.push(format!("{:.3}", t.mean_ms));
            row.push(format!("{:.3}", t.stddev_ms));
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn emit_report(report: &BenchReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => to_json(report),
    };
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}
