//! The feature-generation loop.
//!
//! Each iteration asks the gateway for a query, retrieves the top-k
//! documents, collects one proposal per document, scores every valid
//! proposal by cross-validation with the proposed column appended, and
//! adopts the best one only if it strictly beats the current score. The
//! loop stops after `max_iterations` or after `patience` consecutive
//! iterations without an adoption.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fexpr::{self, FexprError, OperationKind};
use crate::knowledge::{Embedder, KnowledgeBase, KnowledgeError, RetrievalResult, DEFAULT_TOP_K};
use crate::learners::{evaluate_cv, Classifier, LearnError, LearnerConfig};
use crate::metrics::{self, Metric, MetricsError, MetricsReport, DEFAULT_BINS};
use crate::oracle::{CandidateProposal, Gateway, OracleError};
use crate::tabular::{holdout_split, make_folds, Dataset, FeatureMeta, FoldPlan, TabularError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Data(#[from] TabularError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A failed run with every iteration completed before the failure.
#[derive(Debug, Error)]
#[error("run aborted in iteration {} : {cause}", .completed.len() + 1)]
pub struct Aborted {
    pub cause: EngineError,
    pub completed: Vec<IterationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub max_iterations: usize,
    pub patience: usize,
    pub top_k: usize,
    pub metric: Metric,
    pub learner: LearnerConfig,
    pub cv_folds: usize,
    pub seed: u64,
    pub task_goal: String,
    /// Fraction of rows held out for the final report; never used to decide
    /// adoption.
    pub test_fraction: f64,
    /// Bins per numeric feature for the information-gain report.
    pub info_bins: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_iterations: 10,
            patience: 3,
            top_k: DEFAULT_TOP_K,
            metric: Metric::Accuracy,
            learner: LearnerConfig::default(),
            cv_folds: 5,
            seed: 0,
            task_goal: String::new(),
            test_fraction: 0.2,
            info_bins: DEFAULT_BINS,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.top_k < 1 {
            return bad("top_k must be at least 1");
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)");
        }
        if self.info_bins < 2 {
            return bad("info_bins must be at least 2");
        }
        self.learner.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxIterations,
}

/// Outcome for one retrieved document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub doc_id: String,
    pub rank: usize,
    pub label: Option<String>,
    pub formula: Option<String>,
    pub kind: Option<OperationKind>,
    pub reasoning: Option<String>,
    pub chain_of_thought: Option<String>,
    pub score: Option<f64>,
    pub rejection: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub query: String,
    pub retrieved: RetrievalResult,
    pub candidates: Vec<CandidateRecord>,
    /// Index into `candidates` of the highest-scoring valid candidate.
    pub chosen: Option<usize>,
    pub chosen_score: Option<f64>,
    pub decision: Decision,
    pub best_score: f64,
    pub description_after: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub initial_features: Vec<FeatureMeta>,
    pub final_features: Vec<FeatureMeta>,
    pub base_score: f64,
    pub best_score: f64,
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    /// Full dataset (all rows) with adopted columns and final description.
    pub augmented: Dataset,
    /// Held-out scores on the original and the final feature sets.
    pub base_test: Option<MetricsReport>,
    pub final_test: Option<MetricsReport>,
    /// `H(Y|F0) - H(Y|F*)` over all rows.
    pub info_gain_bits: f64,
}

impl RunResult {
    pub fn n_generated(&self) -> usize {
        self.final_features.len() - self.initial_features.len()
    }

    pub fn accepted(&self) -> impl Iterator<Item = &IterationRecord> {
        self.iterations.iter().filter(|r| r.decision == Decision::Accepted)
    }
}

/// Scores a proposal: evaluates its formula over the whole dataset (any
/// non-finite row rejects it), appends it to the training rows and returns
/// the cross-validated score together with the full column.
pub fn evaluate_candidate(
    full: &Dataset,
    train_rows: &[usize],
    proposal: &CandidateProposal,
    learner: &dyn Classifier,
    folds: &FoldPlan,
    metric: Metric,
) -> Result<(f64, Vec<f64>), CandidateRejection> {
    let values = fexpr::evaluate(&proposal.expr, full).map_err(CandidateRejection::Formula)?;
    let train = full.select_rows(train_rows).map_err(CandidateRejection::Data)?;
    let column: Vec<f64> = train_rows.iter().map(|&r| values[r]).collect();
    let tmp = train
        .append_feature(FeatureMeta::numeric(proposal.label.clone()), column)
        .map_err(CandidateRejection::Data)?;
    let score = evaluate_cv(learner, &tmp, folds, metric).map_err(CandidateRejection::Learn)?;
    Ok((score, values))
}

#[derive(Debug, Error)]
pub enum CandidateRejection {
    #[error("{0}")]
    Formula(FexprError),
    #[error("{0}")]
    Data(TabularError),
    #[error("{0}")]
    Learn(LearnError),
}

/// Runs the loop with the learner described by `config.learner`.
pub fn run(
    config: &EngineConfig,
    d0: &Dataset,
    kb: &KnowledgeBase,
    embedder: &dyn Embedder,
    gateway: &mut Gateway,
) -> Result<RunResult, Aborted> {
    run_with(config, d0, kb, embedder, gateway, &config.learner, &mut |_| {})
}

/// Full form: any [`Classifier`] plus a callback invoked after each
/// completed iteration.
pub fn run_with(
    config: &EngineConfig,
    d0: &Dataset,
    kb: &KnowledgeBase,
    embedder: &dyn Embedder,
    gateway: &mut Gateway,
    learner: &dyn Classifier,
    on_iteration: &mut dyn FnMut(&IterationRecord),
) -> Result<RunResult, Aborted> {
    let mut log = Vec::new();
    let res = run_inner(config, d0, kb, embedder, gateway, learner, &mut log, on_iteration);
    res.map_err(|cause| Aborted { cause, completed: log })
}

#[allow(clippy::too_many_arguments)]
fn run_inner(
    config: &EngineConfig,
    d0: &Dataset,
    kb: &KnowledgeBase,
    embedder: &dyn Embedder,
    gateway: &mut Gateway,
    learner: &dyn Classifier,
    log: &mut Vec<IterationRecord>,
    on_iteration: &mut dyn FnMut(&IterationRecord),
) -> Result<RunResult, EngineError> {
    config.validate()?;
    if kb.is_empty() {
        return Err(KnowledgeError::EmptyCorpus("knowledge base".into()).into());
    }
    if kb.dim != embedder.dim() {
        return Err(KnowledgeError::DimensionMismatch(embedder.dim(), kb.dim).into());
    }

    let (train_rows, test_rows) = holdout_split(d0, config.test_fraction, config.seed);
    let folds = make_folds(&d0.select_rows(&train_rows)?, config.cv_folds, config.seed)?;

    let mut full = d0.clone();
    let mut best = evaluate_cv(learner, &full.select_rows(&train_rows)?, &folds, config.metric)?;
    let base_score = best;
    let mut used_docs: HashSet<String> = HashSet::new();
    let mut no_improve = 0;
    let mut stop_reason = StopReason::MaxIterations;

    for t in 1..=config.max_iterations {
        let schema = full.schema();
        let description = full.description().to_string();
        let query = gateway.generate_query(&description, &schema, &config.task_goal)?;
        let retrieved = kb.retrieve(embedder, &query, config.top_k, &used_docs)?;

        let mut candidates = Vec::with_capacity(retrieved.ranked.len());
        let mut proposals = Vec::with_capacity(retrieved.ranked.len());
        for (rank, hit) in retrieved.ranked.iter().enumerate() {
            let doc = kb.get(&hit.id).expect("retrieved ids come from the knowledge base");
            let mut rec = CandidateRecord {
                doc_id: hit.id.clone(),
                rank,
                label: None,
                formula: None,
                kind: None,
                reasoning: None,
                chain_of_thought: None,
                score: None,
                rejection: None,
            };
            match gateway.propose_feature(doc, &schema, &description) {
                Ok(p) => {
                    rec.label = Some(p.label.clone());
                    rec.formula = Some(p.formula.clone());
                    rec.kind = Some(p.kind);
                    rec.reasoning = Some(p.reasoning.clone());
                    rec.chain_of_thought = Some(p.chain_of_thought.clone());
                    proposals.push(Some(p));
                }
                Err(OracleError::MalformedProposal(reason)) => {
                    rec.rejection = Some(format!("malformed proposal: {reason}"));
                    proposals.push(None);
                }
                Err(e) => return Err(e.into()),
            }
            candidates.push(rec);
        }

        // Two documents may propose the same label; only the first (by rank)
        // is scored.
        let mut labels = HashSet::new();
        for (rec, p) in candidates.iter_mut().zip(proposals.iter_mut()) {
            if let Some(prop) = p {
                if !labels.insert(prop.label.clone()) {
                    rec.rejection = Some(format!("duplicate label `{}` in this iteration", prop.label));
                    *p = None;
                }
            }
        }

        let scored: Vec<Option<Result<(f64, Vec<f64>), CandidateRejection>>> = proposals
            .par_iter()
            .map(|p| {
                p.as_ref()
                    .map(|p| evaluate_candidate(&full, &train_rows, p, learner, &folds, config.metric))
            })
            .collect();

        let mut chosen: Option<(usize, f64)> = None;
        let mut chosen_values = None;
        for (i, outcome) in scored.into_iter().enumerate() {
            match outcome {
                None => {}
                Some(Err(e)) => candidates[i].rejection = Some(e.to_string()),
                Some(Ok((score, values))) => {
                    candidates[i].score = Some(score);
                    // strict: earlier rank wins ties
                    if chosen.map_or(true, |(_, s)| score > s) {
                        chosen = Some((i, score));
                        chosen_values = Some(values);
                    }
                }
            }
        }

        let decision = match chosen {
            Some((i, score)) if score > best => {
                let p = proposals[i].as_ref().expect("scored candidates have proposals");
                let meta = FeatureMeta::generated(p.label.clone(), t, p.reasoning.clone());
                let next = full.append_feature(meta, chosen_values.take().expect("values kept for the chosen candidate"))?;
                let new_description = gateway.update_description(&description, p);
                full = next.with_description(new_description);
                best = score;
                used_docs.insert(p.source_doc.clone());
                no_improve = 0;
                Decision::Accepted
            }
            _ => {
                no_improve += 1;
                Decision::Rejected
            }
        };

        let record = IterationRecord {
            t,
            query,
            retrieved,
            candidates,
            chosen: chosen.map(|(i, _)| i),
            chosen_score: chosen.map(|(_, s)| s),
            decision,
            best_score: best,
            description_after: full.description().to_string(),
        };
        on_iteration(&record);
        log.push(record);

        if no_improve >= config.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    let (base_test, final_test) = if test_rows.is_empty() {
        (None, None)
    } else {
        (
            Some(holdout_report(learner, d0, &train_rows, &test_rows)?),
            Some(holdout_report(learner, &full, &train_rows, &test_rows)?),
        )
    };
    let base_names = d0.feature_names();
    let final_names = full.feature_names();
    let base_refs: Vec<&str> = base_names.iter().map(String::as_str).collect();
    let final_refs: Vec<&str> = final_names.iter().map(String::as_str).collect();
    let info_gain_bits = metrics::information_gain(&base_refs, &final_refs, &full, config.info_bins)?;

    Ok(RunResult {
        initial_features: d0.schema(),
        final_features: full.schema(),
        base_score,
        best_score: best,
        iterations: std::mem::take(log),
        stop_reason,
        augmented: full,
        base_test,
        final_test,
        info_gain_bits,
    })
}

fn holdout_report(learner: &dyn Classifier, d: &Dataset, train: &[usize], test: &[usize]) -> Result<MetricsReport, EngineError> {
    let model = learner.fit(d, train)?;
    let pred = model.predict(d, test)?;
    let truth: Vec<usize> = test.iter().map(|&r| d.target()[r]).collect();
    Ok(metrics::classification_report(&truth, &pred)?)
}

pub fn description_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Serialize)]
struct HeaderLine<'a> {
    kind: &'a str,
    started_unix: u64,
}

#[derive(Serialize)]
struct RetrievedLine<'a> {
    id: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct CandidateLine<'a> {
    doc_id: &'a str,
    label: Option<&'a str>,
    formula: Option<&'a str>,
    kind: Option<OperationKind>,
    score: Option<f64>,
    reason: Option<&'a str>,
    reasoning: Option<&'a str>,
    chain_of_thought: Option<&'a str>,
}

#[derive(Serialize)]
struct IterationLine<'a> {
    t: usize,
    query: &'a str,
    retrieved: Vec<RetrievedLine<'a>>,
    candidates: Vec<CandidateLine<'a>>,
    decision: Decision,
    best_score: f64,
    description_hash: String,
    description: &'a str,
}

/// One JSON object per iteration, fields in a fixed order.
pub fn iteration_line(r: &IterationRecord) -> String {
    let line = IterationLine {
        t: r.t,
        query: &r.query,
        retrieved: r
            .retrieved
            .ranked
            .iter()
            .map(|h| RetrievedLine { id: &h.id, score: h.score })
            .collect(),
        candidates: r
            .candidates
            .iter()
            .map(|c| CandidateLine {
                doc_id: &c.doc_id,
                label: c.label.as_deref(),
                formula: c.formula.as_deref(),
                kind: c.kind,
                score: c.score,
                reason: c.rejection.as_deref(),
                reasoning: c.reasoning.as_deref(),
                chain_of_thought: c.chain_of_thought.as_deref(),
            })
            .collect(),
        decision: r.decision,
        best_score: r.best_score,
        description_hash: description_hash(&r.description_after),
        description: &r.description_after,
    };
    serde_json::to_string(&line).expect("provenance serializes")
}

/// First provenance line; the only place a wall-clock time appears.
pub fn provenance_header() -> String {
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let header = HeaderLine {
        kind: "provenance",
        started_unix,
    };
    serde_json::to_string(&header).expect("header serializes")
}

/// Writes the provenance log: a header line carrying the wall-clock start
/// time, then one line per iteration.
pub fn write_provenance(records: &[IterationRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", provenance_header())?;
    for r in records {
        writeln!(out, "{}", iteration_line(r))?;
    }
    out.flush()
}
