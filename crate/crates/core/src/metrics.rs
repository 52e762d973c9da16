//! Classification metrics, ROC analysis and model comparison.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("label arrays differ in length ({truth} vs {predicted})")]
    Length { truth: usize, predicted: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("no samples to score")]
    Empty,
    #[error("ROC needs both positive and negative samples")]
    SingleClass,
    #[error("score at index {0} is not finite")]
    NonFinite(usize),
    #[error("reports are on different test sets ({a} vs {b})")]
    TestSetMismatch { a: String, b: String },
}

/// `counts[t][p]` is the number of samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.n_classes())
            .filter(|&t| t != c)
            .map(|t| self.counts[t][c])
            .sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        self.counts[c].iter().sum::<u64>() - self.counts[c][c]
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }
}

pub fn confusion(
    truth: &[usize],
    predicted: &[usize],
    n_classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::Length {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        let label = t.max(p);
        if label >= n_classes {
            return Err(MetricsError::Label {
                label,
                classes: n_classes,
            });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Headline precision/recall/F1 are those of class 1.
    BinaryPositive,
    /// Headline values are the unweighted mean over classes.
    MacroOneVsRest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AurocScheme {
    Binary,
    MacroOneVsRest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_id: String,
    pub test_set_id: String,
    pub n_samples: u64,
    pub n_classes: usize,
    pub aggregation: Aggregation,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: Option<f64>,
    pub auroc_scheme: Option<AurocScheme>,
    pub per_class: Vec<ClassScores>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub confusion: ConfusionMatrix,
    /// Metrics that hit a zero denominator and were set to 0.
    pub degenerate: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn scores(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let n = cm.n_classes();
    let total = cm.total();
    if n == 0 || total == 0 {
        return Err(MetricsError::Empty);
    }
    let mut degenerate = Vec::new();
    let trace: u64 = (0..n).map(|c| cm.tp(c)).sum();
    let accuracy = trace as f64 / total as f64;
    let per_class: Vec<ClassScores> = (0..n)
        .map(|c| {
            let (tp, fp, fn_, tn) = (cm.tp(c), cm.fp(c), cm.fn_(c), cm.tn(c));
            ClassScores {
                class: c,
                accuracy: (tp + tn) as f64 / total as f64,
                precision: ratio(tp, tp + fp, &format!("precision[{c}]"), &mut degenerate),
                recall: ratio(tp, tp + fn_, &format!("recall[{c}]"), &mut degenerate),
                f1: ratio(
                    2 * tp,
                    2 * tp + fp + fn_,
                    &format!("f1[{c}]"),
                    &mut degenerate,
                ),
                support: cm.support(c),
            }
        })
        .collect();
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / n as f64;
    let macro_avg = Averages {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
    };
    let weighted = |f: fn(&ClassScores) -> f64| {
        per_class
            .iter()
            .map(|s| f(s) * s.support as f64)
            .sum::<f64>()
            / total as f64
    };
    let weighted_avg = Averages {
        precision: weighted(|s| s.precision),
        recall: weighted(|s| s.recall),
        f1: weighted(|s| s.f1),
    };
    let (aggregation, precision, recall, f1) = if n == 2 {
        let p = &per_class[1];
        (Aggregation::BinaryPositive, p.precision, p.recall, p.f1)
    } else {
        (
            Aggregation::MacroOneVsRest,
            macro_avg.precision,
            macro_avg.recall,
            macro_avg.f1,
        )
    };
    Ok(MetricsReport {
        model_id: String::new(),
        test_set_id: String::new(),
        n_samples: total,
        n_classes: n,
        aggregation,
        accuracy,
        precision,
        recall,
        f1,
        auroc: None,
        auroc_scheme: None,
        per_class,
        macro_avg,
        weighted_avg,
        confusion: cm.clone(),
        degenerate,
    })
}

/// ROC curve from `(0, 0)` to `(1, 1)`. The first threshold is `+inf`;
/// each later point classifies `score >= threshold` as positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auroc: f64,
}

pub fn roc(labels: &[bool], scores: &[f64]) -> Result<RocCurve, MetricsError> {
    if labels.len() != scores.len() {
        return Err(MetricsError::Length {
            truth: labels.len(),
            predicted: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let (mut fpr, mut tpr) = (vec![0.0], vec![0.0]);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auroc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x, y) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let (x0, y0) = (*fpr.last().unwrap(), *tpr.last().unwrap());
        auroc += (x - x0) * (y + y0) / 2.0;
        thresholds.push(t);
        fpr.push(x);
        tpr.push(y);
    }
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auroc,
    })
}

/// One-vs-rest ROC of `class` from per-sample probability rows.
pub fn roc_one_vs_rest(
    labels: &[usize],
    probs: &[Vec<f64>],
    class: usize,
) -> Result<RocCurve, MetricsError> {
    let truth: Vec<bool> = labels.iter().map(|&l| l == class).collect();
    let scores: Vec<f64> = probs.iter().map(|p| p[class]).collect();
    roc(&truth, &scores)
}

/// Micro-averaged one-vs-rest ROC: every (sample, class) pair is one
/// binary decision.
pub fn roc_micro(labels: &[usize], probs: &[Vec<f64>]) -> Result<RocCurve, MetricsError> {
    let mut truth = Vec::new();
    let mut scores = Vec::new();
    for (&l, row) in labels.iter().zip(probs) {
        for (c, &p) in row.iter().enumerate() {
            truth.push(l == c);
            scores.push(p);
        }
    }
    roc(&truth, &scores)
}

/// Headline AUROC and the curve to plot. Binary data uses class 1 as the
/// positive class. Multiclass data reports the mean of the per-class
/// one-vs-rest AUROCs over classes present in `labels`, and plots the
/// micro-averaged curve.
pub fn auroc(
    labels: &[usize],
    probs: &[Vec<f64>],
    n_classes: usize,
) -> Result<(f64, AurocScheme, RocCurve), MetricsError> {
    if labels.len() != probs.len() {
        return Err(MetricsError::Length {
            truth: labels.len(),
            predicted: probs.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(MetricsError::Label {
            label,
            classes: n_classes,
        });
    }
    if n_classes == 2 {
        let curve = roc_one_vs_rest(labels, probs, 1)?;
        return Ok((curve.auroc, AurocScheme::Binary, curve));
    }
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..n_classes {
        match roc_one_vs_rest(labels, probs, c) {
            Ok(curve) => {
                sum += curve.auroc;
                present += 1;
            }
            Err(MetricsError::SingleClass) => {}
            Err(e) => return Err(e),
        }
    }
    if present == 0 {
        return Err(MetricsError::SingleClass);
    }
    let curve = roc_micro(labels, probs)?;
    Ok((sum / present as f64, AurocScheme::MacroOneVsRest, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `a - b`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model_a: String,
    pub model_b: String,
    pub test_set_id: String,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side headline metrics of two reports on the same test set.
pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Result<Comparison, MetricsError> {
    if a.test_set_id != b.test_set_id {
        return Err(MetricsError::TestSetMismatch {
            a: a.test_set_id.clone(),
            b: b.test_set_id.clone(),
        });
    }
    let mut rows = Vec::new();
    let mut push = |metric: &str, x: f64, y: f64| {
        rows.push(ComparisonRow {
            metric: metric.to_string(),
            a: x,
            b: y,
            delta: x - y,
        })
    };
    push("Accuracy", a.accuracy, b.accuracy);
    push("Precision", a.precision, b.precision);
    push("Recall", a.recall, b.recall);
    push("F1", a.f1, b.f1);
    if let (Some(x), Some(y)) = (a.auroc, b.auroc) {
        push("AUROC", x, y);
    }
    Ok(Comparison {
        model_a: a.model_id.clone(),
        model_b: b.model_id.clone(),
        test_set_id: a.test_set_id.clone(),
        rows,
    })
}

/// Signed fixed-point delta, e.g. `+0.0191`.
pub fn format_delta(delta: f64, decimals: usize) -> String {
    let delta = if delta == 0.0 { 0.0 } else { delta };
    let body = format!("{:.*}", decimals, delta.abs());
    if delta < 0.0 && body.bytes().any(|b| b.is_ascii_digit() && b != b'0') {
        format!("-{body}")
    } else {
        format!("+{body}")
    }
}
