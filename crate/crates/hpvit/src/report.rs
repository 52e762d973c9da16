//! Evaluation artifacts and model comparison output.
//!
//! An evaluation directory holds `report.json`, `report.schema.json`,
//! `roc.csv` (`threshold,fpr,tpr`), `roc.svg` and `scores.csv` (one row
//! per test sample with its label and class probabilities). A comparison
//! directory holds `comparison.txt`, `comparison.csv`, `comparison.json`
//! and `roc_overlay.svg`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hpvit_core::metrics::{auroc, compare, confusion, Comparison, MetricsError};
use hpvit_core::train::argmax;
use hpvit_core::{MetricsReport, RocCurve};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cache::write_json;
use crate::dataset::DataError;

pub const REPORT_FILE: &str = "report.json";
pub const SCHEMA_FILE: &str = "report.schema.json";
pub const ROC_CSV: &str = "roc.csv";
pub const ROC_SVG: &str = "roc.svg";
pub const SCORES_FILE: &str = "scores.csv";
pub const COMPARE_TXT: &str = "comparison.txt";
pub const COMPARE_CSV: &str = "comparison.csv";
pub const COMPARE_JSON: &str = "comparison.json";
pub const OVERLAY_SVG: &str = "roc_overlay.svg";

/// Column order of the comparison table.
pub const METRIC_COLUMNS: [&str; 5] = ["Accuracy", "Precision", "Recall", "F1", "AUROC"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn parse_err(path: &Path, message: impl ToString) -> ReportError {
    ReportError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// One evaluated test sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub source: String,
    pub label: usize,
    pub probs: Vec<f64>,
}

/// Full report and the ROC curve to plot. A test set with a single class
/// has no ROC; `auroc` is then `None` and listed as degenerate.
pub fn evaluate(
    samples: &[ScoredSample],
    n_classes: usize,
    model_id: &str,
    test_set_id: &str,
) -> Result<(MetricsReport, Option<RocCurve>), ReportError> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let probs: Vec<Vec<f64>> = samples.iter().map(|s| s.probs.clone()).collect();
    let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let mut report = hpvit_core::metrics::scores(&confusion(&labels, &predicted, n_classes)?)?;
    report.model_id = model_id.to_string();
    report.test_set_id = test_set_id.to_string();
    let curve = match auroc(&labels, &probs, n_classes) {
        Ok((value, scheme, curve)) => {
            report.auroc = Some(value);
            report.auroc_scheme = Some(scheme);
            Some(curve)
        }
        Err(MetricsError::SingleClass) => {
            report.degenerate.push("auroc".into());
            None
        }
        Err(e) => return Err(e.into()),
    };
    Ok((report, curve))
}

/// JSON Schema (draft 2020-12) of `report.json`.
pub fn report_schema() -> Value {
    let unit = json!({"type": "number", "minimum": 0, "maximum": 1});
    let averages = json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["precision", "recall", "f1"],
        "properties": {"precision": unit, "recall": unit, "f1": unit}
    });
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$id": "https://hpvit.invalid/report.schema.json",
        "title": "hpvit evaluation report",
        "type": "object",
        "additionalProperties": false,
        "required": [
            "model_id", "test_set_id", "n_samples", "n_classes", "aggregation",
            "accuracy", "precision", "recall", "f1", "auroc", "auroc_scheme",
            "per_class", "macro_avg", "weighted_avg", "confusion", "degenerate"
        ],
        "properties": {
            "model_id": {"type": "string", "description": "Run identifier of the evaluated model"},
            "test_set_id": {"type": "string", "description": "Content hash of the test dataset manifest"},
            "n_samples": {"type": "integer", "minimum": 1},
            "n_classes": {"type": "integer", "minimum": 2},
            "aggregation": {
                "enum": ["binary-positive", "macro-one-vs-rest"],
                "description": "binary-positive: headline precision/recall/F1 are those of class 1; macro-one-vs-rest: unweighted mean over classes"
            },
            "accuracy": unit,
            "precision": unit,
            "recall": unit,
            "f1": unit,
            "auroc": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
            "auroc_scheme": {"enum": ["binary", "macro-one-vs-rest", null]},
            "per_class": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["class", "accuracy", "precision", "recall", "f1", "support"],
                    "properties": {
                        "class": {"type": "integer", "minimum": 0},
                        "accuracy": unit,
                        "precision": unit,
                        "recall": unit,
                        "f1": unit,
                        "support": {"type": "integer", "minimum": 0}
                    }
                }
            },
            "macro_avg": averages,
            "weighted_avg": averages,
            "confusion": {
                "type": "object",
                "additionalProperties": false,
                "required": ["counts"],
                "properties": {
                    "counts": {
                        "type": "array",
                        "description": "counts[t][p]: samples of true class t predicted as p",
                        "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}
                    }
                }
            },
            "degenerate": {
                "type": "array",
                "description": "Metrics whose denominator was zero and were reported as 0",
                "items": {"type": "string"}
            }
        }
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    fs::write(path, text).map_err(|e| DataError::io(path, e))
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for i in 0..curve.fpr.len() {
        let t = curve.thresholds[i];
        let t = if t.is_infinite() {
            "inf".to_string()
        } else {
            t.to_string()
        };
        let _ = writeln!(out, "{t},{},{}", curve.fpr[i], curve.tpr[i]);
    }
    out
}

pub fn read_roc_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>), ReportError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("threshold,fpr,tpr") {
        return Err(parse_err(path, "unexpected ROC header"));
    }
    let (mut fpr, mut tpr) = (Vec::new(), Vec::new());
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(parse_err(path, format!("bad row `{line}`")));
        }
        fpr.push(cols[1].parse().map_err(|e| parse_err(path, e))?);
        tpr.push(cols[2].parse().map_err(|e| parse_err(path, e))?);
    }
    Ok((fpr, tpr))
}

const SVG_SIZE: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 2] = ["#1f77b4", "#d62728"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Self-contained ROC plot with a fixed viewBox; one polyline per curve.
pub fn roc_svg(title: &str, curves: &[(&str, &[f64], &[f64])]) -> String {
    let plot = SVG_SIZE - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + x * plot;
    let py = |y: f64| SVG_SIZE - MARGIN - y * plot;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}" width="{SVG_SIZE}" height="{SVG_SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<rect class="axes" x="{MARGIN}" y="{MARGIN}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line class="chance" x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#,
            px(v),
            py(0.0) + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#,
            px(0.0) - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">False positive rate</text>"#,
        SVG_SIZE / 2.0,
        SVG_SIZE - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">True positive rate</text>"#,
        SVG_SIZE / 2.0,
        SVG_SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="30" text-anchor="middle" font-size="14">{}</text>"#,
        SVG_SIZE / 2.0,
        escape(title)
    );
    for (i, (name, fpr, tpr)) in curves.iter().enumerate() {
        let points: Vec<String> = fpr
            .iter()
            .zip(tpr.iter())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<polyline class="roc-curve" data-run="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(name),
            points.join(" ")
        );
    }
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (i, (name, _, _)) in curves.iter().enumerate() {
        let y = py(0.0) - 12.0 - 18.0 * (curves.len() - 1 - i) as f64;
        let x = px(0.45);
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#,
            y - 4.0,
            x + 20.0,
            y - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{y:.1}">{}</text>"#,
            x + 26.0,
            escape(name)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

pub fn write_scores(
    path: &Path,
    samples: &[ScoredSample],
    n_classes: usize,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(path, e))?;
    let mut header = vec!["source".to_string(), "label".to_string()];
    header.extend((0..n_classes).map(|c| format!("p{c}")));
    w.write_record(&header).map_err(|e| parse_err(path, e))?;
    for s in samples {
        let mut row = vec![s.source.clone(), s.label.to_string()];
        row.extend(s.probs.iter().map(|p| p.to_string()));
        w.write_record(&row).map_err(|e| parse_err(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))?;
    Ok(())
}

/// Reads a score dump written by [`write_scores`].
pub fn read_scores(path: &Path) -> Result<Vec<ScoredSample>, ReportError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
    let n_classes = r
        .headers()
        .map_err(|e| parse_err(path, e))?
        .len()
        .saturating_sub(2);
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| parse_err(path, e))?;
            let label = rec[1].parse().map_err(|e| parse_err(path, e))?;
            let probs = (0..n_classes)
                .map(|c| rec[2 + c].parse().map_err(|e| parse_err(path, e)))
                .collect::<Result<Vec<f64>, _>>()?;
            Ok(ScoredSample {
                source: rec[0].to_string(),
                label,
                probs,
            })
        })
        .collect()
}

/// Recomputes the headline AUROC from a score dump.
pub fn replay_auroc(path: &Path) -> Result<f64, ReportError> {
    let samples = read_scores(path)?;
    let n_classes = samples.first().map_or(0, |s| s.probs.len());
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let probs: Vec<Vec<f64>> = samples.into_iter().map(|s| s.probs).collect();
    Ok(auroc(&labels, &probs, n_classes)?.0)
}

/// Writes every evaluation artifact into `dir`.
pub fn write_eval(
    dir: &Path,
    report: &MetricsReport,
    curve: Option<&RocCurve>,
    samples: &[ScoredSample],
) -> Result<(), ReportError> {
    write_json(&dir.join(REPORT_FILE), report)?;
    write_json(&dir.join(SCHEMA_FILE), &report_schema())?;
    let empty = RocCurve {
        thresholds: vec![],
        fpr: vec![],
        tpr: vec![],
        auroc: 0.0,
    };
    let curve = curve.unwrap_or(&empty);
    write_text(&dir.join(ROC_CSV), &roc_csv(curve))?;
    let title = format!("ROC: {}", report.model_id);
    let svg = roc_svg(&title, &[(&report.model_id, &curve.fpr, &curve.tpr)]);
    write_text(&dir.join(ROC_SVG), &svg)?;
    write_scores(&dir.join(SCORES_FILE), samples, report.n_classes)
}

/// `report.json` and its sibling `roc.csv`, from a report file or an
/// evaluation directory.
pub fn read_eval(path: &Path) -> Result<(MetricsReport, Vec<f64>, Vec<f64>), ReportError> {
    let file = if path.is_dir() {
        path.join(REPORT_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| DataError::io(&file, e))?;
    let report: MetricsReport = serde_json::from_str(&text).map_err(|e| parse_err(&file, e))?;
    let roc = file.parent().unwrap_or(Path::new(".")).join(ROC_CSV);
    let (fpr, tpr) = read_roc_csv(&roc)?;
    Ok((report, fpr, tpr))
}

fn headline(r: &MetricsReport) -> [Option<f64>; 5] {
    [
        Some(r.accuracy),
        Some(r.precision),
        Some(r.recall),
        Some(r.f1),
        r.auroc,
    ]
}

/// Fixed-width table: one row per model plus the signed difference A − B.
pub fn comparison_text(a: &MetricsReport, b: &MetricsReport, c: &Comparison) -> String {
    let width = a
        .model_id
        .len()
        .max(b.model_id.len())
        .max("Delta (A - B)".len())
        + 2;
    let mut s = String::new();
    let _ = writeln!(s, "Test set: {}", c.test_set_id);
    let _ = writeln!(s, "A = {}", a.model_id);
    let _ = writeln!(s, "B = {}", b.model_id);
    let _ = writeln!(s);
    let _ = write!(s, "{:<width$}", "Model");
    for m in METRIC_COLUMNS {
        let _ = write!(s, "{m:>11}");
    }
    let _ = writeln!(s);
    for r in [a, b] {
        let _ = write!(s, "{:<width$}", r.model_id);
        for v in headline(r) {
            match v {
                Some(v) => {
                    let _ = write!(s, "{v:>11.4}");
                }
                None => {
                    let _ = write!(s, "{:>11}", "n/a");
                }
            }
        }
        let _ = writeln!(s);
    }
    let _ = write!(s, "{:<width$}", "Delta (A - B)");
    for v in delta_columns(c) {
        match v {
            Some(d) => {
                let _ = write!(s, "{:>11}", hpvit_core::metrics::format_delta(d, 4));
            }
            None => {
                let _ = write!(s, "{:>11}", "n/a");
            }
        }
    }
    let _ = writeln!(s);
    s
}

fn delta_columns(c: &Comparison) -> [Option<f64>; 5] {
    METRIC_COLUMNS.map(|m| c.rows.iter().find(|r| r.metric == m).map(|r| r.delta))
}

pub fn comparison_csv(
    a: &MetricsReport,
    b: &MetricsReport,
    c: &Comparison,
) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut header = vec!["model".to_string()];
    header.extend(METRIC_COLUMNS.iter().map(|m| m.to_string()));
    let rows = [
        (a.model_id.clone(), headline(a)),
        (b.model_id.clone(), headline(b)),
        ("delta".to_string(), delta_columns(c)),
    ];
    let io = |e: csv::Error| parse_err(Path::new(COMPARE_CSV), e);
    w.write_record(&header).map_err(io)?;
    for (name, values) in rows {
        let mut row = vec![name];
        row.extend(values.iter().map(|v| cell(*v)));
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| parse_err(Path::new(COMPARE_CSV), e))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Compares two evaluation outputs and writes the table, CSV, JSON and ROC
/// overlay into `out`.
pub fn write_comparison(
    a_path: &Path,
    b_path: &Path,
    out: &Path,
) -> Result<Comparison, ReportError> {
    let (a, a_fpr, a_tpr) = read_eval(a_path)?;
    let (b, b_fpr, b_tpr) = read_eval(b_path)?;
    let c = compare(&a, &b)?;
    write_text(&out.join(COMPARE_TXT), &comparison_text(&a, &b, &c))?;
    write_text(&out.join(COMPARE_CSV), &comparison_csv(&a, &b, &c)?)?;
    write_json(&out.join(COMPARE_JSON), &c)?;
    let title = format!("ROC: {} vs {}", a.model_id, b.model_id);
    let svg = roc_svg(
        &title,
        &[(&a.model_id, &a_fpr, &a_tpr), (&b.model_id, &b_fpr, &b_tpr)],
    );
    write_text(&out.join(OVERLAY_SVG), &svg)?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(label: usize, p1: f64) -> ScoredSample {
        ScoredSample {
            source: format!("c{label}/x,{p1}.png"),
            label,
            probs: vec![1.0 - p1, p1],
        }
    }

    #[test]
    fn evaluate_binary_and_single_class() {
        let s = vec![
            sample(0, 0.2),
            sample(0, 0.6),
            sample(1, 0.7),
            sample(1, 0.4),
        ];
        let (r, curve) = evaluate(&s, 2, "m", "t").unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.auroc, Some(0.75));
        assert_eq!(curve.unwrap().fpr.len(), 5);
        let (r, curve) = evaluate(&s[..2], 2, "m", "t").unwrap();
        assert!(curve.is_none() && r.auroc.is_none());
        assert!(r.degenerate.contains(&"auroc".to_string()));
    }

    #[test]
    fn scores_survive_a_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = vec![sample(0, 0.1 + 0.2), sample(1, 1.0 / 3.0)];
        let path = dir.path().join(SCORES_FILE);
        write_scores(&path, &s, 2).unwrap();
        assert_eq!(read_scores(&path).unwrap(), s);
    }

    #[test]
    fn svg_has_fixed_viewbox_and_one_polyline_per_curve() {
        let svg = roc_svg(
            "t",
            &[
                ("a<b", &[0.0, 1.0], &[0.0, 1.0]),
                ("c", &[0.0, 1.0], &[0.0, 1.0]),
            ],
        );
        assert!(svg.contains(r#"viewBox="0 0 400 400""#));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
    }
}
