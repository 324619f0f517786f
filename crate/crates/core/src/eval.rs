//! Detection metrics and report files. Anomalous is the positive class and a
//! sample is predicted anomalous when its score exceeds the threshold.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};

/// Scores with ground-truth origin (true = novel). Only evaluation code builds these.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryOutcomeSet {
    pub scores: Vec<f64>,
    pub truth: Vec<bool>,
}

impl BinaryOutcomeSet {
    pub fn new(scores: Vec<f64>, truth: Vec<bool>) -> Result<Self> {
        if scores.len() != truth.len() {
            return Err(Error::InvalidInput(format!("{} scores but {} labels", scores.len(), truth.len())));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("outcome scores contain a non-finite value".into()));
        }
        Ok(BinaryOutcomeSet { scores, truth })
    }

    /// Baseline scores labeled negative, novel scores positive.
    pub fn from_groups(baseline: &[f64], novel: &[f64]) -> Result<Self> {
        let scores = baseline.iter().chain(novel).copied().collect();
        let truth = std::iter::repeat_n(false, baseline.len()).chain(std::iter::repeat_n(true, novel.len())).collect();
        Self::new(scores, truth)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.truth.iter().filter(|&&t| t).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

fn ratio(num: u64, den: u64, what: &str) -> f64 {
    if den == 0 {
        log::warn!("{what} is 0/0; reporting 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision(tp: u64, fp: u64) -> f64 {
    ratio(tp, tp + fp, "precision")
}

pub fn recall(tp: u64, fn_: u64) -> f64 {
    ratio(tp, tp + fn_, "recall")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        precision(self.tp, self.fp)
    }

    pub fn recall(&self) -> f64 {
        recall(self.tp, self.fn_)
    }

    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn, "false positive rate")
    }

    /// Thresholded binary accuracy.
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total(), "accuracy")
    }
}

pub fn confusion_at(outcomes: &BinaryOutcomeSet, tau: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &t) in outcomes.scores.iter().zip(&outcomes.truth) {
        match (s > tau, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Lowest score flagged at this point; `+∞` for the origin.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Indices sorted by descending score, grouped by equal score.
fn score_groups(outcomes: &BinaryOutcomeSet) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| outcomes.scores[b].total_cmp(&outcomes.scores[a]));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in order {
        let s = outcomes.scores[i];
        let (pos, neg) = if outcomes.truth[i] { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                g.1 += pos;
                g.2 += neg;
            }
            _ => groups.push((s, pos, neg)),
        }
    }
    groups
}

/// ROC curve swept over distinct scores, and its trapezoidal area.
pub fn roc_auc(outcomes: &BinaryOutcomeSet) -> Result<(Vec<RocPoint>, f64)> {
    let p = outcomes.positives() as f64;
    let n = outcomes.negatives() as f64;
    if p == 0.0 || n == 0.0 {
        return Err(Error::InvalidInput("AUC needs both anomalous and baseline samples".into()));
    }
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut auc = 0.0;
    for (score, pos, neg) in score_groups(outcomes) {
        let prev = *points.last().expect("origin");
        tp += pos;
        fp += neg;
        let pt = RocPoint { threshold: score, fpr: fp as f64 / n, tpr: tp as f64 / p };
        auc += (pt.fpr - prev.fpr) * (pt.tpr + prev.tpr) / 2.0;
        points.push(pt);
    }
    Ok((points, auc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall when flagging every score ≥ each distinct score.
pub fn precision_recall_curve(outcomes: &BinaryOutcomeSet) -> Vec<PrPoint> {
    let p = outcomes.positives() as u64;
    let (mut tp, mut fp) = (0u64, 0u64);
    score_groups(outcomes)
        .into_iter()
        .map(|(score, pos, neg)| {
            tp += pos;
            fp += neg;
            PrPoint { threshold: score, precision: precision(tp, fp), recall: recall(tp, p - tp) }
        })
        .collect()
}

/// `points` evenly spaced quantiles (0 to 1 inclusive) of `scores`.
pub fn quantile_grid(scores: &[f64], points: usize) -> Vec<f64> {
    if scores.is_empty() || points == 0 {
        return Vec::new();
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    (0..points)
        .map(|i| {
            let q = if points == 1 { 0.5 } else { i as f64 / (points - 1) as f64 };
            let pos = q * last;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub threshold: f64,
    pub recall: f64,
}

pub fn recall_vs_threshold(outcomes: &BinaryOutcomeSet, grid: &[f64]) -> Result<Vec<RecallPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("threshold grid is empty".into()));
    }
    Ok(grid.iter().map(|&tau| RecallPoint { threshold: tau, recall: confusion_at(outcomes, tau).recall() }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub baseline: u64,
    pub novel: u64,
}

/// Shared-bin histogram of baseline and novel scores.
pub fn error_histogram(outcomes: &BinaryOutcomeSet, bins: usize) -> Vec<HistogramBin> {
    if outcomes.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = outcomes.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = outcomes.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin { lower: lo + i as f64 * width, upper: lo + (i + 1) as f64 * width, baseline: 0, novel: 0 })
        .collect();
    for (&s, &t) in outcomes.scores.iter().zip(&outcomes.truth) {
        let idx = (((s - lo) / width) as usize).min(bins - 1);
        if t {
            out[idx].novel += 1;
        } else {
            out[idx].baseline += 1;
        }
    }
    out
}

pub const RECALL_GRID_POINTS: usize = 100;
pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tau_used: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub false_positive_rate: f64,
    pub auc: f64,
    pub mean_error_baseline: f64,
    pub mean_error_novel: f64,
    pub confusion: Confusion,
    pub roc: Vec<RocPoint>,
    pub precision_recall: Vec<PrPoint>,
    pub recall_curve: Vec<RecallPoint>,
    pub histogram: Vec<HistogramBin>,
}

fn mean_where(outcomes: &BinaryOutcomeSet, truth: bool) -> f64 {
    let vals: Vec<f64> = outcomes.scores.iter().zip(&outcomes.truth).filter(|(_, &t)| t == truth).map(|(&s, _)| s).collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn evaluate(outcomes: &BinaryOutcomeSet, tau: f64) -> Result<MetricsReport> {
    if outcomes.is_empty() {
        return Err(Error::InvalidInput("no outcomes to evaluate".into()));
    }
    let confusion = confusion_at(outcomes, tau);
    let (roc, auc) = roc_auc(outcomes)?;
    let grid = quantile_grid(&outcomes.scores, RECALL_GRID_POINTS);
    Ok(MetricsReport {
        tau_used: tau,
        precision: confusion.precision(),
        recall: confusion.recall(),
        accuracy: confusion.accuracy(),
        false_positive_rate: confusion.false_positive_rate(),
        auc,
        mean_error_baseline: mean_where(outcomes, false),
        mean_error_novel: mean_where(outcomes, true),
        confusion,
        roc,
        precision_recall: precision_recall_curve(outcomes),
        recall_curve: recall_vs_threshold(outcomes, &grid)?,
        histogram: error_histogram(outcomes, HISTOGRAM_BINS),
    })
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.10e}")
    }
}

fn csv<T>(header: &str, rows: &[T], row: impl Fn(&T) -> String) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&row(r));
        s.push('\n');
    }
    s
}

/// Writes `metrics.json` and one CSV per curve into `out_dir`; returns the paths written.
///
/// Files: `roc.csv` (threshold,fpr,tpr), `precision_recall.csv`
/// (threshold,precision,recall), `recall_vs_threshold.csv` (threshold,recall),
/// `confusion.csv` (actual,predicted,count), `error_histogram.csv`
/// (lower,upper,baseline,novel).
pub fn emit_report(report: &MetricsReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(&str, String)> = vec![
        ("roc.csv", csv("threshold,fpr,tpr", &report.roc, |p| format!("{},{},{}", num(p.threshold), num(p.fpr), num(p.tpr)))),
        (
            "precision_recall.csv",
            csv("threshold,precision,recall", &report.precision_recall, |p| {
                format!("{},{},{}", num(p.threshold), num(p.precision), num(p.recall))
            }),
        ),
        (
            "recall_vs_threshold.csv",
            csv("threshold,recall", &report.recall_curve, |p| format!("{},{}", num(p.threshold), num(p.recall))),
        ),
        (
            "error_histogram.csv",
            csv("lower,upper,baseline,novel", &report.histogram, |b| {
                format!("{},{},{},{}", num(b.lower), num(b.upper), b.baseline, b.novel)
            }),
        ),
    ];
    let c = &report.confusion;
    let mut confusion = String::from("actual,predicted,count\n");
    for (a, p, n) in [("anomalous", "anomalous", c.tp), ("anomalous", "normal", c.fn_), ("normal", "anomalous", c.fp), ("normal", "normal", c.tn)] {
        let _ = writeln!(confusion, "{a},{p},{n}");
    }
    files.push(("confusion.csv", confusion));

    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        artifact::write_bytes(&path, body.as_bytes())?;
        written.push(path);
    }
    let path = out_dir.join("metrics.json");
    artifact::write_json(&path, report)?;
    written.push(path);
    Ok(written)
}

/// Loss-curve CSV from a header and preformatted rows.
pub fn write_loss_curve(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    artifact::write_bytes(path, csv(header, rows, Clone::clone).as_bytes())
}
