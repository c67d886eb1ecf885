//! Downstream classifiers: a CART decision tree (Gini impurity) and a bagged
//! random forest built from it.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Metric;
use crate::tabular::{Dataset, FoldPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("model feature `{0}` is missing from the dataset")]
    SchemaMismatch(String),
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    DecisionTree,
    RandomForest,
}

/// Number of features considered at each forest split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFraction {
    /// `ceil(sqrt(p))` of the `p` usable features.
    Sqrt,
    /// `ceil(f * p)`, with `f` in `(0, 1]`.
    Fixed(f64),
}

impl FeatureFraction {
    fn count(self, usable: usize) -> usize {
        let m = match self {
            FeatureFraction::Sqrt => (usable as f64).sqrt().ceil() as usize,
            FeatureFraction::Fixed(f) => (f * usable as f64).ceil() as usize,
        };
        m.clamp(1, usable.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub n_trees: usize,
    pub feature_fraction: FeatureFraction,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            kind: LearnerKind::RandomForest,
            max_depth: 8,
            min_leaf: 2,
            n_trees: 100,
            feature_fraction: FeatureFraction::Sqrt,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn decision_tree(max_depth: usize) -> Self {
        LearnerConfig {
            kind: LearnerKind::DecisionTree,
            max_depth,
            min_leaf: 1,
            ..LearnerConfig::default()
        }
    }

    pub fn random_forest(n_trees: usize, max_depth: usize, seed: u64) -> Self {
        LearnerConfig {
            kind: LearnerKind::RandomForest,
            max_depth,
            n_trees,
            seed,
            ..LearnerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.to_string()));
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if self.min_leaf < 1 {
            return bad("min_leaf must be at least 1");
        }
        if self.n_trees < 1 {
            return bad("n_trees must be at least 1");
        }
        if let FeatureFraction::Fixed(f) = self.feature_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad("feature_fraction must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

/// A trained model.
pub trait Model: Send + Sync {
    /// One class code per requested row.
    fn predict(&self, d: &Dataset, rows: &[usize]) -> Result<Vec<usize>, LearnError>;
}

/// Anything that can be trained on a row subset of a dataset. The engine
/// only sees this interface, so external learners can be plugged in.
pub trait Classifier: Sync {
    fn fit(&self, d: &Dataset, rows: &[usize]) -> Result<Box<dyn Model>, LearnError>;
}

impl Classifier for LearnerConfig {
    fn fit(&self, d: &Dataset, rows: &[usize]) -> Result<Box<dyn Model>, LearnError> {
        Ok(match train(self, d, rows)? {
            Trained::Tree(t) => Box::new(t),
            Trained::Forest(f) => Box::new(f),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf {
        counts: Vec<usize>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

fn majority(counts: &[usize]) -> usize {
    // first maximum: ties go to the smallest class code
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// Binary CART tree. Rows with `value <= threshold` go left.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeModel {
    features: Vec<String>,
    nodes: Vec<Node>,
}

impl TreeModel {
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Training rows per leaf, in node order.
    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { counts } => Some(counts.iter().sum()),
                Node::Split { .. } => None,
            })
            .collect()
    }

    /// Split features and thresholds in node order, by feature name.
    pub fn splits(&self) -> Vec<(String, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, threshold, .. } => Some((self.features[*feature].clone(), *threshold)),
                Node::Leaf { .. } => None,
            })
            .collect()
    }

    fn resolve<'d>(&self, d: &'d Dataset) -> Result<Vec<&'d [f64]>, LearnError> {
        self.features
            .iter()
            .map(|name| {
                d.column(name)
                    .map(|c| c.values())
                    .ok_or_else(|| LearnError::SchemaMismatch(name.clone()))
            })
            .collect()
    }

    fn predict_row(&self, cols: &[&[f64]], row: usize) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return majority(counts),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if cols[*feature][row] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

impl Model for TreeModel {
    fn predict(&self, d: &Dataset, rows: &[usize]) -> Result<Vec<usize>, LearnError> {
        let cols = self.resolve(d)?;
        Ok(rows.iter().map(|&r| self.predict_row(&cols, r)).collect())
    }
}

/// Majority vote over bootstrapped trees; ties go to the smallest class code.
#[derive(Clone, Debug, PartialEq)]
pub struct ForestModel {
    trees: Vec<TreeModel>,
    n_classes: usize,
}

impl ForestModel {
    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }
}

impl Model for ForestModel {
    fn predict(&self, d: &Dataset, rows: &[usize]) -> Result<Vec<usize>, LearnError> {
        let resolved = self
            .trees
            .iter()
            .map(|t| t.resolve(d))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(rows
            .iter()
            .map(|&r| {
                let mut votes = vec![0; self.n_classes];
                for (t, cols) in self.trees.iter().zip(&resolved) {
                    votes[t.predict_row(cols, r)] += 1;
                }
                majority(&votes)
            })
            .collect())
    }
}

pub enum Trained {
    Tree(TreeModel),
    Forest(ForestModel),
}

impl Trained {
    pub fn predict(&self, d: &Dataset, rows: &[usize]) -> Result<Vec<usize>, LearnError> {
        match self {
            Trained::Tree(t) => t.predict(d, rows),
            Trained::Forest(f) => f.predict(d, rows),
        }
    }
}

struct Builder<'a> {
    cols: Vec<&'a [f64]>,
    target: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_leaf: usize,
    subsample: Option<(FeatureFraction, ChaCha8Rng)>,
    nodes: Vec<Node>,
}

fn gini_sum(counts: &[usize], n: usize) -> f64 {
    // n * gini = n - sum(c^2) / n
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    n as f64 - sq / n as f64
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a / 2.0 + b / 2.0;
    if m >= a && m < b {
        m
    } else {
        a
    }
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &r in rows {
            counts[self.target[r]] += 1;
        }
        counts
    }

    /// Best `(feature, threshold)` among `candidates` by Gini gain; ties keep
    /// the lowest feature index, then the lowest threshold.
    fn best_split(&self, rows: &[usize], counts: &[usize], candidates: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let parent = gini_sum(counts, n) / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for &f in candidates {
            let col = self.cols[f];
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            let mut left = vec![0; self.n_classes];
            for i in 1..n {
                left[self.target[order[i - 1]]] += 1;
                let (lo, hi) = (col[order[i - 1]], col[order[i]]);
                if lo == hi || i < self.min_leaf || n - i < self.min_leaf {
                    continue;
                }
                let right: Vec<usize> = counts.iter().zip(&left).map(|(t, l)| t - l).collect();
                let weighted = (gini_sum(&left, i) + gini_sum(&right, n - i)) / n as f64;
                let gain = parent - weighted;
                if best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, f, midpoint(lo, hi)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn usable(&self, rows: &[usize]) -> Vec<usize> {
        (0..self.cols.len())
            .filter(|&f| {
                let col = self.cols[f];
                let first = col[rows[0]];
                rows.iter().any(|&r| col[r] != first)
            })
            .collect()
    }

    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let counts = self.counts(rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if pure || depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            None
        } else {
            // constant features can never split, so sampling only among
            // non-constant ones keeps the draw unaffected by them
            let mut candidates = self.usable(rows);
            if let Some((fraction, rng)) = self.subsample.as_mut() {
                let m = fraction.count(candidates.len());
                if m < candidates.len() {
                    let mut picked: Vec<usize> = sample(rng, candidates.len(), m).into_iter().map(|i| candidates[i]).collect();
                    picked.sort_unstable();
                    candidates = picked;
                }
            }
            self.best_split(rows, &counts, &candidates)
        };
        let id = self.nodes.len();
        match split {
            None => {
                self.nodes.push(Node::Leaf { counts });
                id
            }
            Some((feature, threshold)) => {
                self.nodes.push(Node::Leaf { counts: Vec::new() });
                let col = self.cols[feature];
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| col[row] <= threshold);
                let left = self.build(&l, depth + 1);
                let right = self.build(&r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                id
            }
        }
    }
}

fn grow_tree(config: &LearnerConfig, d: &Dataset, rows: &[usize], subsample: Option<(FeatureFraction, ChaCha8Rng)>) -> TreeModel {
    let mut b = Builder {
        cols: d.columns().iter().map(|c| c.values()).collect(),
        target: d.target(),
        n_classes: d.n_classes(),
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        subsample,
        nodes: Vec::new(),
    };
    b.build(rows, 0);
    TreeModel {
        features: d.feature_names(),
        nodes: b.nodes,
    }
}

fn tree_seed(seed: u64, tree: usize) -> u64 {
    // splitmix64 step so neighbouring trees get unrelated streams
    let mut z = seed.wrapping_add((tree as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Trains the configured learner on `rows` of `d`. Deterministic given the
/// configuration seed.
pub fn train(config: &LearnerConfig, d: &Dataset, rows: &[usize]) -> Result<Trained, LearnError> {
    config.validate()?;
    if rows.is_empty() {
        return Err(LearnError::EmptyTrainingSet);
    }
    match config.kind {
        LearnerKind::DecisionTree => Ok(Trained::Tree(grow_tree(config, d, rows, None))),
        LearnerKind::RandomForest => {
            let trees = (0..config.n_trees)
                .into_par_iter()
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(config.seed, t));
                    let bag: Vec<usize> = (0..rows.len()).map(|_| rows[rng.gen_range(0..rows.len())]).collect();
                    grow_tree(config, d, &bag, Some((config.feature_fraction, rng)))
                })
                .collect();
            Ok(Trained::Forest(ForestModel {
                trees,
                n_classes: d.n_classes(),
            }))
        }
    }
}

/// Mean out-of-fold score across the folds of `folds`.
pub fn evaluate_cv(learner: &dyn Classifier, d: &Dataset, folds: &FoldPlan, metric: Metric) -> Result<f64, LearnError> {
    let scores = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let test = folds.test_rows(f);
            let model = learner.fit(d, &folds.train_rows(f))?;
            let pred = model.predict(d, &test)?;
            let truth: Vec<usize> = test.iter().map(|&r| d.target()[r]).collect();
            Ok(metric.score(&truth, &pred))
        })
        .collect::<Result<Vec<f64>, LearnError>>()?;
    // summed in fold order so parallel and serial runs agree bit for bit
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::make_folds;

    fn dataset(cols: Vec<(&str, Vec<f64>)>, labels: &[&str]) -> Dataset {
        Dataset::from_numeric(cols.into_iter().map(|(n, v)| (n.to_string(), v)).collect(), "y", labels, "").unwrap()
    }

    fn accuracy(model: &Trained, d: &Dataset) -> f64 {
        let rows: Vec<usize> = (0..d.n_rows()).collect();
        Metric::Accuracy.score(d.target(), &model.predict(d, &rows).unwrap())
    }

    fn xor() -> Dataset {
        dataset(
            vec![("a", vec![0.0, 0.0, 1.0, 1.0]), ("b", vec![0.0, 1.0, 0.0, 1.0])],
            &["0", "1", "1", "0"],
        )
    }

    /// Accuracy of the best depth-1 stump found by trying every feature and
    /// every threshold between adjacent values, with majority leaves.
    fn best_stump_accuracy(d: &Dataset) -> f64 {
        let n = d.n_rows();
        let mut best = 0.0f64;
        for c in d.columns() {
            let mut vals: Vec<f64> = c.values().to_vec();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let mut correct = 0;
                for side in [true, false] {
                    let mut counts = vec![0; d.n_classes()];
                    for r in 0..n {
                        if (c.values()[r] <= t) == side {
                            counts[d.target()[r]] += 1;
                        }
                    }
                    correct += counts.iter().max().unwrap();
                }
                best = best.max(correct as f64 / n as f64);
            }
        }
        best
    }

    #[test]
    fn xor_needs_two_levels() {
        let d = xor();
        let rows = [0, 1, 2, 3];
        let deep = train(&LearnerConfig::decision_tree(2), &d, &rows).unwrap();
        assert_eq!(accuracy(&deep, &d), 1.0);
        let stump = train(&LearnerConfig::decision_tree(1), &d, &rows).unwrap();
        assert_eq!(best_stump_accuracy(&d), 0.5);
        assert_eq!(accuracy(&stump, &d), best_stump_accuracy(&d));
    }

    #[test]
    fn separable_and_degenerate() {
        let d = dataset(vec![("x", vec![1.0, 2.0, 3.0, 10.0, 11.0, 12.0])], &["a", "a", "a", "b", "b", "b"]);
        let all: Vec<usize> = (0..6).collect();
        let m = train(&LearnerConfig::decision_tree(1), &d, &all).unwrap();
        assert_eq!(accuracy(&m, &d), 1.0);
        if let Trained::Tree(t) = &m {
            assert_eq!(t.splits(), vec![("x".to_string(), 6.5)]);
        }
        let Trained::Tree(single) = train(&LearnerConfig::decision_tree(5), &d, &[0, 1, 2]).unwrap() else {
            unreachable!()
        };
        assert_eq!(single.n_leaves(), 1);
        assert_eq!(single.predict(&d, &all).unwrap(), vec![0; 6]);
        assert_eq!(single.predict(&d, &[]).unwrap(), Vec::<usize>::new());
        assert!(matches!(
            train(&LearnerConfig::decision_tree(2), &d, &[]),
            Err(LearnError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn depth_and_leaf_limits() {
        let n = 64;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let labels: Vec<&str> = (0..n).map(|i| if (i / 3) % 2 == 0 { "0" } else { "1" }).collect();
        let d = dataset(vec![("x", x)], &labels);
        let rows: Vec<usize> = (0..n).collect();
        let cfg = LearnerConfig {
            min_leaf: 4,
            ..LearnerConfig::decision_tree(3)
        };
        let Trained::Tree(t) = train(&cfg, &d, &rows).unwrap() else { unreachable!() };
        assert!(t.depth() <= 3);
        assert!(t.leaf_sizes().iter().all(|&s| s >= 4));
    }

    #[test]
    fn invalid_config() {
        let d = xor();
        for cfg in [
            LearnerConfig { max_depth: 0, ..LearnerConfig::default() },
            LearnerConfig { min_leaf: 0, ..LearnerConfig::default() },
            LearnerConfig { n_trees: 0, ..LearnerConfig::default() },
            LearnerConfig { feature_fraction: FeatureFraction::Fixed(0.0), ..LearnerConfig::default() },
        ] {
            assert!(matches!(train(&cfg, &d, &[0, 1]), Err(LearnError::InvalidConfig(_))));
        }
    }

    #[test]
    fn schema_mismatch_on_predict() {
        let d = xor();
        let m = train(&LearnerConfig::decision_tree(2), &d, &[0, 1, 2, 3]).unwrap();
        let other = dataset(vec![("a", vec![0.0, 1.0])], &["0", "1"]);
        assert_eq!(m.predict(&other, &[0]), Err(LearnError::SchemaMismatch("b".into())));
    }

    #[test]
    fn forest_of_one_matches_its_tree() {
        let d = xor();
        let cfg = LearnerConfig::random_forest(1, 3, 9);
        let Trained::Forest(f) = train(&cfg, &d, &[0, 1, 2, 3]).unwrap() else { unreachable!() };
        let rows = [0, 1, 2, 3];
        assert_eq!(f.predict(&d, &rows).unwrap(), f.trees()[0].predict(&d, &rows).unwrap());
    }

    #[test]
    fn cv_is_deterministic_and_perfect_on_separable_data() {
        // a wide gap between the classes keeps every out-of-fold row on the
        // right side of any learned threshold
        let x: Vec<f64> = (0..40).map(|i| if i < 20 { i as f64 } else { 80.0 + i as f64 }).collect();
        let labels: Vec<&str> = (0..40).map(|i| if i < 20 { "n" } else { "p" }).collect();
        let d = dataset(vec![("x", x)], &labels);
        let folds = make_folds(&d, 5, 1).unwrap();
        let tree = LearnerConfig::decision_tree(2);
        assert_eq!(evaluate_cv(&tree, &d, &folds, Metric::Accuracy).unwrap(), 1.0);
        assert_eq!(evaluate_cv(&tree, &d, &folds, Metric::MacroF1).unwrap(), 1.0);
        let forest = LearnerConfig::random_forest(10, 4, 3);
        let a = evaluate_cv(&forest, &d, &folds, Metric::Accuracy).unwrap();
        assert!(a >= 0.95);
        assert_eq!(a.to_bits(), evaluate_cv(&forest, &d, &folds, Metric::Accuracy).unwrap().to_bits());
    }
}
