//! Challenge metrics, per-AU threshold search and the comparison table.
//!
//! F1 is macro-averaged over categories (or AUs). A category whose F1
//! denominator is zero scores 0; such categories are listed in
//! [`MetricReport::zero_denominator`] so the convention stays visible.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::curation::{AuVector, ExpressionId, VaPair};
use crate::objectives::ccc;
use crate::task::{Task, AU_NAMES, EXPRESSION_NAMES, NUM_AUS, NUM_EXPRESSIONS};
use crate::tensor::Matrix;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `{0.05, 0.10, …, 0.95}`.
pub fn default_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// One binarization cutoff per AU, in [`AU_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdVector(pub [f64; NUM_AUS]);

impl Default for ThresholdVector {
    fn default() -> Self {
        Self::uniform(DEFAULT_THRESHOLD)
    }
}

impl ThresholdVector {
    pub fn uniform(t: f64) -> Self {
        Self([t; NUM_AUS])
    }

    pub fn validate(&self) -> Result<()> {
        match self.0.iter().position(|t| !(*t > 0.0 && *t < 1.0)) {
            Some(i) => Err(Error::Contract(format!("threshold {} for {} outside (0,1)", self.0[i], AU_NAMES[i]))),
            None => Ok(()),
        }
    }
}

/// Score for one task. `score` is always the mean of `breakdown`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub score: f64,
    /// `[CCC_V, CCC_A]`, 8 expression F1s or 12 AU F1s.
    pub breakdown: Vec<f64>,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdVector>,
    pub frames: usize,
    /// Indices into `breakdown` that scored 0 for lack of any support.
    #[serde(default)]
    pub zero_denominator: Vec<usize>,
    /// AU only: the same predictions scored at per-AU optimized cutoffs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimized: Option<Box<MetricReport>>,
}

impl MetricReport {
    fn from_breakdown(task: Task, breakdown: Vec<f64>, labels: Vec<String>, frames: usize) -> Self {
        let score = mean(&breakdown);
        Self {
            task,
            score,
            breakdown,
            labels,
            thresholds: None,
            frames,
            zero_denominator: Vec::new(),
            optimized: None,
        }
    }

    /// Mean of the breakdown; equals `score` for every report built here.
    pub fn recomputed_score(&self) -> f64 {
        mean(&self.breakdown)
    }

    /// Score at optimized thresholds, if present.
    pub fn optimized_score(&self) -> Option<f64> {
        self.optimized.as_ref().map(|r| r.score)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Counts for one binary decision problem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl BinaryCounts {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    /// `2·TP / (2·TP + FP + FN)`, or `None` when nothing was predicted or present.
    pub fn f1_checked(&self) -> Option<f64> {
        let den = 2 * self.tp + self.fp + self.fn_;
        (den > 0).then(|| 2.0 * self.tp as f64 / den as f64)
    }

    pub fn f1(&self) -> f64 {
        self.f1_checked().unwrap_or(0.0)
    }
}

fn check_len(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            expected: format!("{expected} {what}"),
            got: got.to_string(),
        })
    }
}

/// `(CCC_V + CCC_A) / 2`.
pub fn metric_va(pred: &[VaPair], target: &[VaPair]) -> Result<MetricReport> {
    check_len(pred.len(), target.len(), "targets")?;
    let (pv, pa): (Vec<f64>, Vec<f64>) = pred.iter().map(|p| (p.valence, p.arousal)).unzip();
    let (tv, ta): (Vec<f64>, Vec<f64>) = target.iter().map(|p| (p.valence, p.arousal)).unzip();
    let breakdown = vec![ccc(&pv, &tv)?, ccc(&pa, &ta)?];
    let labels = vec!["CCC_V".to_string(), "CCC_A".to_string()];
    Ok(MetricReport::from_breakdown(Task::Va, breakdown, labels, pred.len()))
}

fn expr_index(label: ExpressionId) -> Result<usize> {
    usize::try_from(label.0)
        .ok()
        .filter(|&l| l < NUM_EXPRESSIONS)
        .ok_or_else(|| Error::Label(format!("expression label {}", label.0)))
}

/// Mean one-vs-rest F1 over all eight categories.
pub fn metric_expr(pred: &[ExpressionId], truth: &[ExpressionId]) -> Result<MetricReport> {
    check_len(pred.len(), truth.len(), "labels")?;
    let mut counts = [BinaryCounts::default(); NUM_EXPRESSIONS];
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (expr_index(p)?, expr_index(t)?);
        if p == t {
            counts[p].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[t].fn_ += 1;
        }
    }
    let labels = EXPRESSION_NAMES.iter().map(|s| s.to_string()).collect();
    Ok(binary_report(Task::Expr, &counts, labels, pred.len()))
}

fn binary_report(task: Task, counts: &[BinaryCounts], labels: Vec<String>, frames: usize) -> MetricReport {
    let breakdown = counts.iter().map(BinaryCounts::f1).collect();
    let mut report = MetricReport::from_breakdown(task, breakdown, labels, frames);
    report.zero_denominator = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.f1_checked().is_none())
        .map(|(i, _)| i)
        .collect();
    report
}

fn check_au_inputs(probs: &Matrix, labels: &[AuVector]) -> Result<()> {
    check_len(NUM_AUS, probs.cols, "AU columns")?;
    check_len(probs.rows, labels.len(), "label rows")?;
    if let Some(p) = probs.data.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Contract(format!("AU probability {p} outside [0,1]")));
    }
    for l in labels {
        if l.0.iter().any(|&v| v != 0 && v != 1) {
            return Err(Error::Label(format!("AU labels {:?}", l.0)));
        }
    }
    Ok(())
}

fn au_counts(probs: &Matrix, labels: &[AuVector], au: usize, threshold: f64) -> BinaryCounts {
    let mut c = BinaryCounts::default();
    for (r, l) in labels.iter().enumerate() {
        c.add(probs.at(r, au) >= threshold, l.0[au] == 1);
    }
    c
}

/// Mean per-AU F1 after binarizing `probs` at `thresholds` (inclusive).
pub fn metric_au(probs: &Matrix, labels: &[AuVector], thresholds: &ThresholdVector) -> Result<MetricReport> {
    check_au_inputs(probs, labels)?;
    thresholds.validate()?;
    let counts: Vec<BinaryCounts> = (0..NUM_AUS)
        .map(|au| au_counts(probs, labels, au, thresholds.0[au]))
        .collect();
    let names = AU_NAMES.iter().map(|s| s.to_string()).collect();
    let mut report = binary_report(Task::Au, &counts, names, labels.len());
    report.thresholds = Some(*thresholds);
    Ok(report)
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Contract("threshold grid is empty".into()));
    }
    if grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::Contract("threshold grid values must lie in (0,1)".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract("threshold grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Per AU, the grid value with the highest F1; the lowest wins ties.
pub fn optimize_thresholds(probs: &Matrix, labels: &[AuVector], grid: &[f64]) -> Result<ThresholdVector> {
    validate_grid(grid)?;
    check_au_inputs(probs, labels)?;
    let mut out = [grid[0]; NUM_AUS];
    for (au, slot) in out.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for &t in grid {
            let f1 = au_counts(probs, labels, au, t).f1();
            if f1 > best {
                best = f1;
                *slot = t;
            }
        }
    }
    Ok(ThresholdVector(out))
}

/// Scores `probs` at 0.5, then attaches the report at thresholds fitted on
/// the same data.
pub fn metric_au_with_optimized(probs: &Matrix, labels: &[AuVector], grid: &[f64]) -> Result<MetricReport> {
    let mut base = metric_au(probs, labels, &ThresholdVector::default())?;
    let tuned = optimize_thresholds(probs, labels, grid)?;
    base.optimized = Some(Box::new(metric_au(probs, labels, &tuned)?));
    Ok(base)
}

/// One row of the comparison table. Missing cells render as `-`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub ccc_va: Option<f64>,
    pub f1_expr: Option<f64>,
    pub f1_au: Option<f64>,
    pub f1_au_opt: Option<f64>,
}

impl ComparisonRow {
    pub fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            ..Self::default()
        }
    }

    /// Fills the column(s) that `report` speaks for.
    pub fn absorb(&mut self, report: &MetricReport) {
        match report.task {
            Task::Va => self.ccc_va = Some(report.score),
            Task::Expr => self.f1_expr = Some(report.score),
            Task::Au => {
                self.f1_au = Some(report.score);
                if let Some(opt) = report.optimized_score() {
                    self.f1_au_opt = Some(opt);
                }
            }
        }
    }
}

pub const COMPARISON_COLUMNS: [&str; 4] = ["CCC_VA", "F1_Expr", "F1_AU", "F1_AUopt"];

/// Method label for a backbone/head combination, e.g. `CLIP+LSTM`.
pub fn method_label(clip: bool, lstm: bool) -> String {
    let trunk = if clip { "CLIP" } else { "DDAMFN" };
    let head = if lstm { "LSTM" } else { "FC" };
    format!("{trunk}+{head}")
}

/// Canonical row order for [`method_label`] combinations; unknown methods follow.
fn method_rank(method: &str) -> usize {
    ["DDAMFN+FC", "DDAMFN+LSTM", "CLIP+FC", "CLIP+LSTM"]
        .iter()
        .position(|m| *m == method)
        .unwrap_or(usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub zero_division: String,
}

impl ComparisonTable {
    pub fn new() -> Self {
        Self {
            rows: Vec::new(),
            zero_division: "categories without support score 0".into(),
        }
    }

    pub fn row_mut(&mut self, method: &str) -> &mut ComparisonRow {
        let pos = match self.rows.iter().position(|r| r.method == method) {
            Some(p) => p,
            None => {
                self.rows.push(ComparisonRow::new(method));
                self.rows.sort_by(|a, b| method_rank(&a.method).cmp(&method_rank(&b.method)).then(a.method.cmp(&b.method)));
                self.rows.iter().position(|r| r.method == method).unwrap()
            }
        };
        &mut self.rows[pos]
    }

    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max("Method".len());
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "Method");
        for c in COMPARISON_COLUMNS {
            let _ = write!(out, "  {c:>8}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<width$}", r.method);
            for v in [r.ccc_va, r.f1_expr, r.f1_au, r.f1_au_opt] {
                match v {
                    Some(v) => {
                        let _ = write!(out, "  {v:>8.3}");
                    }
                    None => {
                        let _ = write!(out, "  {:>8}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests;
