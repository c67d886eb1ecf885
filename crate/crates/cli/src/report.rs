//! The stored run summary (`run.json`) and its text rendering.

use std::fmt::Write;

use featforge::engine::{CandidateRecord, Decision, IterationRecord, RunResult, StopReason};
use featforge::metrics::{render_table, Metric, MetricsReport};
use featforge::OperationKind;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedFeature {
    pub name: String,
    pub formula: String,
    pub kind: Option<OperationKind>,
    pub iteration: usize,
    pub source_doc: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub t: usize,
    pub decision: Decision,
    pub label: Option<String>,
    pub chosen_score: Option<f64>,
    pub best_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub target: String,
    pub classes: Vec<String>,
    pub metric: Metric,
    pub original_features: Vec<String>,
    pub generated: Vec<GeneratedFeature>,
    pub base_score: f64,
    pub best_score: f64,
    pub stop_reason: StopReason,
    pub iterations: Vec<IterationRow>,
    pub base_test: Option<MetricsReport>,
    pub final_test: Option<MetricsReport>,
    pub info_gain_bits: f64,
}

impl RunSummary {
    pub fn new(res: &RunResult, metric: Metric) -> Self {
        RunSummary {
            target: res.augmented.target_name().to_string(),
            classes: res.augmented.classes().to_vec(),
            metric,
            original_features: res.initial_features.iter().map(|m| m.name.clone()).collect(),
            generated: res
                .accepted()
                .filter_map(|r| {
                    let c = chosen(r)?;
                    Some(GeneratedFeature {
                        name: c.label.clone()?,
                        formula: c.formula.clone()?,
                        kind: c.kind,
                        iteration: r.t,
                        source_doc: c.doc_id.clone(),
                    })
                })
                .collect(),
            base_score: res.base_score,
            best_score: res.best_score,
            stop_reason: res.stop_reason,
            iterations: res
                .iterations
                .iter()
                .map(|r| IterationRow {
                    t: r.t,
                    decision: r.decision,
                    label: chosen(r).and_then(|c| c.label.clone()),
                    chosen_score: r.chosen_score,
                    best_score: r.best_score,
                })
                .collect(),
            base_test: res.base_test.clone(),
            final_test: res.final_test.clone(),
            info_gain_bits: res.info_gain_bits,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let metric = match self.metric {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
        };
        let _ = writeln!(out, "target: {} ({} classes)", self.target, self.classes.len());
        let _ = writeln!(
            out,
            "features: original {}, generated {}",
            self.original_features.len(),
            self.generated.len()
        );
        let stop = match self.stop_reason {
            StopReason::Patience => "patience",
            StopReason::MaxIterations => "max_iterations",
        };
        let _ = writeln!(out, "stopped by {stop} after {} iterations", self.iterations.len());
        let _ = writeln!(out, "\ncross-validated {metric}: base {:.4} -> best {:.4}\n", self.base_score, self.best_score);

        let _ = writeln!(out, "{:>3}  {:<8}  {:<24}  {:>9}  {:>9}  trajectory", "t", "decision", "candidate", "score", "best");
        let _ = writeln!(out, "{:>3}  {:<8}  {:<24}  {:>9}  {:>9}  {}", 0, "base", "-", "-", fmt(self.base_score), bar(self.base_score));
        for r in &self.iterations {
            let decision = match r.decision {
                Decision::Accepted => "accepted",
                Decision::Rejected => "rejected",
            };
            let _ = writeln!(
                out,
                "{:>3}  {:<8}  {:<24}  {:>9}  {:>9}  {}",
                r.t,
                decision,
                truncate(r.label.as_deref().unwrap_or("-"), 24),
                r.chosen_score.map_or("-".into(), fmt),
                fmt(r.best_score),
                bar(r.best_score)
            );
        }

        if !self.generated.is_empty() {
            let _ = writeln!(out, "\ngenerated features:");
            for g in &self.generated {
                let kind = g.kind.map_or(String::new(), |k| format!(" [{k}]"));
                let _ = writeln!(out, "  t={} {} = {}{kind} (from {})", g.iteration, g.name, g.formula, g.source_doc);
            }
        }

        for (title, report) in [("held-out, original features", &self.base_test), ("held-out, final features", &self.final_test)] {
            if let Some(rep) = report {
                let _ = writeln!(out, "\n{title}:");
                out.push_str(&render_table(rep, &self.classes, self.info_gain_bits));
            }
        }
        if self.final_test.is_none() {
            let _ = writeln!(out, "\ninfo_gain_bits {:.6}", self.info_gain_bits);
        }
        out
    }
}

fn chosen(r: &IterationRecord) -> Option<&CandidateRecord> {
    r.chosen.map(|i| &r.candidates[i])
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn bar(v: f64) -> String {
    "#".repeat((v.clamp(0.0, 1.0) * 40.0).round() as usize)
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        s.chars().take(n - 1).chain(std::iter::once('~')).collect()
    }
}
