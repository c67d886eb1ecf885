//! Run configuration file: flat TOML, every key optional, unknown keys are
//! errors.

use std::path::Path;

use featforge::engine::EngineConfig;
use featforge::learners::{FeatureFraction, LearnerConfig, LearnerKind};
use featforge::metrics::Metric;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_LLM_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_LLM_MODEL: &str = "gpt-4o";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Live,
    Replay,
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Fraction {
    Named(String),
    Value(f64),
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub max_iterations: Option<usize>,
    pub patience: Option<usize>,
    pub top_k: Option<usize>,
    pub metric: Option<Metric>,
    pub cv_folds: Option<usize>,
    pub seed: Option<u64>,
    pub task_goal: Option<String>,
    pub test_fraction: Option<f64>,
    pub info_bins: Option<usize>,

    pub learner: Option<LearnerKind>,
    pub max_depth: Option<usize>,
    pub min_leaf: Option<usize>,
    pub n_trees: Option<usize>,
    pub feature_fraction: Option<Fraction>,
    /// Defaults to `seed`.
    pub learner_seed: Option<u64>,

    pub mode: Option<Mode>,
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
    pub embed_endpoint: Option<String>,
    pub embed_model: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    pub fn engine(&self) -> Result<EngineConfig, CliError> {
        let d = EngineConfig::default();
        let seed = self.seed.unwrap_or(d.seed);
        let kind = self.learner.unwrap_or(d.learner.kind);
        let base = match kind {
            LearnerKind::DecisionTree => LearnerConfig::decision_tree(d.learner.max_depth),
            LearnerKind::RandomForest => LearnerConfig::default(),
        };
        let feature_fraction = match &self.feature_fraction {
            None => base.feature_fraction,
            Some(Fraction::Named(s)) if s == "sqrt" => FeatureFraction::Sqrt,
            Some(Fraction::Named(s)) => {
                return Err(CliError::Usage(format!("feature_fraction must be \"sqrt\" or a number, got \"{s}\"")))
            }
            Some(Fraction::Value(v)) => FeatureFraction::Fixed(*v),
        };
        let learner = LearnerConfig {
            kind,
            max_depth: self.max_depth.unwrap_or(base.max_depth),
            min_leaf: self.min_leaf.unwrap_or(base.min_leaf),
            n_trees: self.n_trees.unwrap_or(base.n_trees),
            feature_fraction,
            seed: self.learner_seed.unwrap_or(seed),
        };
        let cfg = EngineConfig {
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            patience: self.patience.unwrap_or(d.patience),
            top_k: self.top_k.unwrap_or(d.top_k),
            metric: self.metric.unwrap_or(d.metric),
            learner,
            cv_folds: self.cv_folds.unwrap_or(d.cv_folds),
            seed,
            task_goal: self.task_goal.clone().unwrap_or_default(),
            test_fraction: self.test_fraction.unwrap_or(d.test_fraction),
            info_bins: self.info_bins.unwrap_or(d.info_bins),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}
