//! Sweep report emission: CSV, JSON and markdown with identical numeric
//! content.
//!
//! All floats are rendered with 6 significant digits; the JSON payload
//! carries the same rounded values so the two formats agree exactly.
//! `sigma = 0` rows report epsilon as the string sentinel `inf`.

use serde::Serialize;
use thiserror::Error;

use super::sweep::SweepResult;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("unsupported report format {0:?}")]
    UnsupportedFormat(String),
    #[error("no sweep points to report")]
    EmptyResults,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" | "markdown-table" => Ok(ReportFormat::Markdown),
            other => Err(ReportError::UnsupportedFormat(other.to_string())),
        }
    }
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "modality",
    "sigma",
    "epsilon",
    "accuracy",
    "precision_macro",
    "recall_macro",
    "f1_macro",
    "precision_high",
    "recall_high",
    "f1_high",
    "n_test",
];

/// Render with 6 significant digits. Zero renders as `0`; infinities as
/// `inf`.
pub fn format_sig(value: f64, digits: usize) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if value.is_nan() {
        return "nan".to_string();
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    format!("{value:.decimals$}")
}

/// Parse back the 6-digit rendering so JSON numbers match CSV text exactly.
fn rounded(value: f64) -> f64 {
    if !value.is_finite() {
        return value;
    }
    format_sig(value, 6).parse().unwrap_or(value)
}

#[derive(Serialize)]
struct JsonRow {
    modality: String,
    sigma: f64,
    epsilon: serde_json::Value,
    accuracy: f64,
    precision_macro: f64,
    recall_macro: f64,
    f1_macro: f64,
    precision_high: f64,
    recall_high: f64,
    f1_high: f64,
    n_test: usize,
}

struct Row {
    modality: String,
    sigma: f64,
    epsilon: f64,
    values: [f64; 7],
    n_test: usize,
}

fn rows(result: &SweepResult) -> Vec<Row> {
    result
        .points
        .iter()
        .map(|point| {
            let high = point.metrics.class_metrics("high");
            Row {
                modality: result.modality.clone(),
                sigma: point.sigma,
                epsilon: point.epsilon,
                values: [
                    point.metrics.accuracy,
                    point.metrics.precision_macro,
                    point.metrics.recall_macro,
                    point.metrics.f1_macro,
                    high.map_or(0.0, |m| m.precision),
                    high.map_or(0.0, |m| m.recall),
                    high.map_or(0.0, |m| m.f1),
                ],
                n_test: point.metrics.n,
            }
        })
        .collect()
}

pub fn emit_report(result: &SweepResult, format: ReportFormat) -> Result<Vec<u8>, ReportError> {
    if result.points.is_empty() {
        return Err(ReportError::EmptyResults);
    }
    let rows = rows(result);
    let text = match format {
        ReportFormat::Csv => {
            let mut out = REPORT_COLUMNS.join(",");
            out.push('\n');
            for row in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.modality,
                    format_sig(row.sigma, 6),
                    format_sig(row.epsilon, 6),
                    row.values
                        .iter()
                        .map(|v| format_sig(*v, 6))
                        .collect::<Vec<_>>()
                        .join(","),
                    row.n_test
                ));
            }
            out
        }
        ReportFormat::Json => {
            let json_rows: Vec<JsonRow> = rows
                .iter()
                .map(|row| JsonRow {
                    modality: row.modality.clone(),
                    sigma: rounded(row.sigma),
                    epsilon: if row.epsilon.is_finite() {
                        serde_json::json!(rounded(row.epsilon))
                    } else {
                        serde_json::json!("inf")
                    },
                    accuracy: rounded(row.values[0]),
                    precision_macro: rounded(row.values[1]),
                    recall_macro: rounded(row.values[2]),
                    f1_macro: rounded(row.values[3]),
                    precision_high: rounded(row.values[4]),
                    recall_high: rounded(row.values[5]),
                    f1_high: rounded(row.values[6]),
                    n_test: row.n_test,
                })
                .collect();
            let mut out = serde_json::to_string_pretty(&json_rows).expect("rows serialize");
            out.push('\n');
            out
        }
        ReportFormat::Markdown => {
            let mut out = format!("| {} |\n", REPORT_COLUMNS.join(" | "));
            out.push_str(&format!("|{}\n", "---|".repeat(REPORT_COLUMNS.len())));
            for row in &rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    row.modality,
                    format_sig(row.sigma, 6),
                    format_sig(row.epsilon, 6),
                    row.values
                        .iter()
                        .map(|v| format_sig(*v, 6))
                        .collect::<Vec<_>>()
                        .join(" | "),
                    row.n_test
                ));
            }
            out
        }
    };
    Ok(text.into_bytes())
}
