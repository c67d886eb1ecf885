//! Classification metrics and information-theoretic feature measures.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::{Dataset, FeatureKind};

/// Default bins per numeric feature for entropy estimates.
pub const DEFAULT_BINS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label vectors are empty")]
    Empty,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("bins must be at least 2")]
    TooFewBins,
    #[error("feature `{0}` of the base set is missing from the extended set")]
    NotSubset(String),
}

/// Score driving feature acceptance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    MacroF1,
}

impl Metric {
    /// Score of `y_pred` against `y_true`. Both must be non-empty and of
    /// equal length.
    pub fn score(self, y_true: &[usize], y_pred: &[usize]) -> f64 {
        match self {
            Metric::Accuracy => accuracy(y_true, y_pred),
            Metric::MacroF1 => classification_report(y_true, y_pred)
                .map(|r| r.macro_f1)
                .unwrap_or(0.0),
        }
    }
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    hits as f64 / y_true.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus per-class and macro-averaged precision, recall and F1.
///
/// Macro averages run over the classes present in `y_true`; a 0/0 ratio
/// counts as 0.
pub fn classification_report(y_true: &[usize], y_pred: &[usize]) -> Result<MetricsReport, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut classes: Vec<usize> = y_true.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let per_class: Vec<ClassScores> = classes
        .iter()
        .map(|&c| {
            let (mut tp, mut fp, mut fneg) = (0, 0, 0);
            for (&t, &p) in y_true.iter().zip(y_pred) {
                match (t == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fneg += 1,
                    (false, false) => {}
                }
            }
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fneg);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                class: c,
                precision,
                recall,
                f1,
                support: tp + fneg,
            }
        })
        .collect();
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / per_class.len() as f64;
    Ok(MetricsReport {
        accuracy: accuracy(y_true, y_pred),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub bits: f64,
    /// Number of non-empty joint cells.
    pub n_cells: usize,
    pub bins: usize,
}

/// Equal-frequency bin edges from the full column: the values at ranks
/// `floor(j * n / bins)` for `j = 1..bins`, with duplicate edges merged.
///
/// An edge equal to the column minimum would bound an empty bin; it is
/// moved up to the next distinct value so a heavy point mass at the minimum
/// still gets its own bin.
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let above_min = sorted.iter().copied().find(|&v| v > sorted[0]);
    let mut edges: Vec<f64> = (1..bins)
        .filter_map(|j| {
            let e = sorted[j * n / bins];
            if e > sorted[0] {
                Some(e)
            } else {
                above_min
            }
        })
        .collect();
    edges.dedup();
    edges
}

/// Bin of each value: the number of edges at or below it.
pub fn discretize(values: &[f64], edges: &[f64]) -> Vec<usize> {
    values.iter().map(|v| edges.partition_point(|e| e <= v)).collect()
}

fn cell_codes(d: &Dataset, features: &[&str], bins: usize) -> Result<Vec<Vec<usize>>, MetricsError> {
    if bins < 2 {
        return Err(MetricsError::TooFewBins);
    }
    features
        .iter()
        .map(|&name| {
            let col = d.column(name).ok_or_else(|| MetricsError::UnknownFeature(name.to_string()))?;
            Ok(match col.meta.kind {
                FeatureKind::Categorical => col.values().iter().map(|&v| v as usize).collect(),
                FeatureKind::Numeric => discretize(col.values(), &quantile_edges(col.values(), bins)),
            })
        })
        .collect()
}

/// Empirical `H(Y | F)` in bits over the joint bin cells of `features`.
/// An empty feature list gives the marginal entropy `H(Y)`.
pub fn conditional_entropy(d: &Dataset, features: &[&str], bins: usize) -> Result<EntropyEstimate, MetricsError> {
    let codes = cell_codes(d, features, bins)?;
    let mut cells: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (row, &y) in d.target().iter().enumerate() {
        let key: Vec<usize> = codes.iter().map(|c| c[row]).collect();
        let counts = cells.entry(key).or_insert_with(|| vec![0; d.n_classes()]);
        counts[y] += 1;
    }
    let n = d.n_rows() as f64;
    let mut bits = 0.0;
    for counts in cells.values() {
        let in_cell: usize = counts.iter().sum();
        for &c in counts.iter().filter(|&&c| c > 0) {
            bits += c as f64 * (in_cell as f64 / c as f64).log2();
        }
    }
    Ok(EntropyEstimate {
        bits: bits / n,
        n_cells: cells.len(),
        bins,
    })
}

/// `H(Y | base) - H(Y | extended)` under the same binning.
///
/// Refining a partition cannot raise the empirical conditional entropy, so
/// a negative difference can only be rounding noise and is reported as 0.
pub fn information_gain(base: &[&str], extended: &[&str], d: &Dataset, bins: usize) -> Result<f64, MetricsError> {
    if let Some(missing) = base.iter().find(|f| !extended.contains(f)) {
        return Err(MetricsError::NotSubset(missing.to_string()));
    }
    let before = conditional_entropy(d, base, bins)?.bits;
    let after = conditional_entropy(d, extended, bins)?.bits;
    let gain = before - after;
    Ok(if gain < 0.0 && gain > -1e-12 { 0.0 } else { gain })
}

/// Fixed-order `key=value` lines.
pub fn render_key_values(report: &MetricsReport, info_gain_bits: f64) -> String {
    format!(
        "accuracy={}\nmacro_precision={}\nmacro_recall={}\nmacro_f1={}\ninfo_gain_bits={}\n",
        report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1, info_gain_bits
    )
}

/// Plain-text table: summary rows then one row per class.
pub fn render_table(report: &MetricsReport, classes: &[String], info_gain_bits: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>8}", "metric", "value");
    for (k, v) in [
        ("accuracy", report.accuracy),
        ("macro_precision", report.macro_precision),
        ("macro_recall", report.macro_recall),
        ("macro_f1", report.macro_f1),
        ("info_gain_bits", info_gain_bits),
    ] {
        let _ = writeln!(out, "{k:<16} {v:>8.4}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<16} {:>9} {:>8} {:>8} {:>8}", "class", "precision", "recall", "f1", "support");
    for c in &report.per_class {
        let name = classes.get(c.class).map(String::as_str).unwrap_or("?");
        let _ = writeln!(
            out,
            "{:<16} {:>9.4} {:>8.4} {:>8.4} {:>8}",
            name, c.precision, c.recall, c.f1, c.support
        );
    }
    out
}
