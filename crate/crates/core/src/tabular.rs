//! Tabular data model: CSV ingestion, feature columns, fold plans.
//!
//! A [`Dataset`] is immutable. Appending a feature returns a new dataset that
//! shares the existing column buffers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column `{0}` not found in header")]
    UnknownTarget(String),
    #[error("duplicate header `{0}`")]
    DuplicateHeader(String),
    #[error("table has no data rows")]
    EmptyTable,
    #[error("target has a single class; at least two are required")]
    SingleClass,
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("feature `{0}` already exists")]
    NameCollision(String),
    #[error("column has {found} values, dataset has {expected} rows")]
    LengthMismatch { found: usize, expected: usize },
    #[error("feature name must be non-empty")]
    EmptyName,
    #[error("numeric column `{0}` contains a non-finite value")]
    NonFinite(String),
    #[error("cannot split {rows} rows into {k} folds")]
    TooManyFolds { k: usize, rows: usize },
    #[error("row index {0} out of range")]
    RowOutOfRange(usize),
}

pub type Result<T, E = TabularError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Numeric => f.write_str("numeric"),
            FeatureKind::Categorical => f.write_str("categorical"),
        }
    }
}

/// Where a feature came from. Generated features remember the iteration that
/// adopted them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Generated(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
    pub description: String,
    pub origin: Origin,
    /// Original strings of a categorical column, indexed by code.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl FeatureMeta {
    pub fn numeric(name: impl Into<String>) -> Self {
        FeatureMeta {
            name: name.into(),
            kind: FeatureKind::Numeric,
            description: String::new(),
            origin: Origin::Original,
            categories: Vec::new(),
        }
    }

    pub fn generated(name: impl Into<String>, iteration: usize, description: impl Into<String>) -> Self {
        FeatureMeta {
            name: name.into(),
            kind: FeatureKind::Numeric,
            description: description.into(),
            origin: Origin::Generated(iteration),
            categories: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub meta: FeatureMeta,
    values: Arc<[f64]>,
}

impl Column {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }
}

/// Feature columns, a class-coded target, and the dataset's description text.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    target_name: String,
    target: Arc<[usize]>,
    classes: Arc<[String]>,
    description: String,
}

impl Dataset {
    /// Builds a dataset from numeric columns and string class labels.
    ///
    /// Classes are coded in sorted order (numerically when every label
    /// parses as a number).
    pub fn from_numeric<S: AsRef<str>>(
        columns: Vec<(String, Vec<f64>)>,
        target_name: impl Into<String>,
        labels: &[S],
        description: impl Into<String>,
    ) -> Result<Self> {
        let cols = columns
            .into_iter()
            .map(|(name, values)| (FeatureMeta::numeric(name), values))
            .collect();
        Dataset::new(cols, target_name, labels, description)
    }

    pub fn new<S: AsRef<str>>(
        columns: Vec<(FeatureMeta, Vec<f64>)>,
        target_name: impl Into<String>,
        labels: &[S],
        description: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(TabularError::EmptyTable);
        }
        let (classes, target) = encode_classes(labels);
        if classes.len() < 2 {
            return Err(TabularError::SingleClass);
        }
        let mut ds = Dataset {
            columns: Vec::with_capacity(columns.len()),
            target_name: target_name.into(),
            target: target.into(),
            classes: classes.into(),
            description: description.into(),
        };
        for (meta, values) in columns {
            ds.push_column(meta, values)?;
        }
        Ok(ds)
    }

    fn push_column(&mut self, meta: FeatureMeta, values: Vec<f64>) -> Result<()> {
        if meta.name.is_empty() {
            return Err(TabularError::EmptyName);
        }
        if meta.name == self.target_name || self.column(&meta.name).is_some() {
            return Err(TabularError::NameCollision(meta.name));
        }
        if values.len() != self.n_rows() {
            return Err(TabularError::LengthMismatch {
                found: values.len(),
                expected: self.n_rows(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TabularError::NonFinite(meta.name));
        }
        self.columns.push(Column {
            meta,
            values: values.into(),
        });
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.meta.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.meta.name == name)
    }

    /// Feature metadata in column order.
    pub fn schema(&self) -> Vec<FeatureMeta> {
        self.columns.iter().map(|c| c.meta.clone()).collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.meta.name.clone()).collect()
    }

    /// Class codes, one per row.
    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn with_description(&self, description: impl Into<String>) -> Dataset {
        Dataset {
            description: description.into(),
            ..self.clone()
        }
    }

    /// Returns a copy with one more column, ordered last.
    pub fn append_feature(&self, meta: FeatureMeta, values: Vec<f64>) -> Result<Dataset> {
        let mut next = self.clone();
        next.push_column(meta, values)?;
        Ok(next)
    }

    /// Restricts the dataset to `rows`, in the given order. Class coding is
    /// kept so codes stay comparable with the parent dataset.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_rows()) {
            return Err(TabularError::RowOutOfRange(bad));
        }
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                meta: c.meta.clone(),
                values: rows.iter().map(|&r| c.values[r]).collect(),
            })
            .collect();
        Ok(Dataset {
            columns,
            target_name: self.target_name.clone(),
            target: rows.iter().map(|&r| self.target[r]).collect(),
            classes: self.classes.clone(),
            description: self.description.clone(),
        })
    }

    /// Writes features then target as CSV. Categorical columns and the target
    /// are written with their original strings.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.columns.iter().map(|c| c.name()).collect();
        header.push(&self.target_name);
        w.write_record(&header)?;
        for row in 0..self.n_rows() {
            let mut record: Vec<String> = self
                .columns
                .iter()
                .map(|c| {
                    let v = c.values[row];
                    match c.meta.kind {
                        FeatureKind::Categorical => c
                            .meta
                            .categories
                            .get(v as usize)
                            .cloned()
                            .unwrap_or_else(|| v.to_string()),
                        FeatureKind::Numeric => v.to_string(),
                    }
                })
                .collect();
            record.push(self.classes[self.target[row]].clone());
            w.write_record(&record)?;
        }
        w.flush().map_err(|source| TabularError::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn encode_classes<S: AsRef<str>>(labels: &[S]) -> (Vec<String>, Vec<usize>) {
    let mut distinct: Vec<String> = labels
        .iter()
        .map(|l| l.as_ref().to_string())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    let all_numeric = distinct.iter().all(|l| parse_number(l).is_some());
    if all_numeric {
        distinct.sort_by(|a, b| {
            let (x, y) = (parse_number(a).unwrap(), parse_number(b).unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        });
    } else {
        distinct.sort();
    }
    let code: HashMap<&str, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let target = labels.iter().map(|l| code[l.as_ref()]).collect();
    (distinct, target)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Reads a CSV file with a header row. `description` becomes the dataset's
/// initial description text.
pub fn load_csv(path: impl AsRef<Path>, target_name: &str, description: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TabularError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, target_name, description)
}

/// Like [`load_csv`] but from any reader. Lines starting with `#` are
/// comments.
pub fn read_csv<R: Read>(input: R, target_name: &str, description: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(TabularError::DuplicateHeader(h.clone()));
        }
    }
    let target_idx = headers
        .iter()
        .position(|h| h == target_name)
        .ok_or_else(|| TabularError::UnknownTarget(target_name.to_string()))?;

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(TabularError::RaggedRow {
                row: i + 1,
                found: record.len(),
                expected: headers.len(),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            cells[col].push(cell.to_string());
        }
    }
    if cells[target_idx].is_empty() {
        return Err(TabularError::EmptyTable);
    }

    let mut columns = Vec::with_capacity(headers.len() - 1);
    for (col, name) in headers.iter().enumerate() {
        if col == target_idx {
            continue;
        }
        columns.push(ingest_column(name, &cells[col]));
    }
    Dataset::new(columns, target_name, &cells[target_idx], description)
}

fn ingest_column(name: &str, cells: &[String]) -> (FeatureMeta, Vec<f64>) {
    let numeric = cells
        .iter()
        .all(|c| is_missing(c) || parse_number(c).is_some())
        && cells.iter().any(|c| !is_missing(c));
    if numeric {
        let parsed: Vec<Option<f64>> = cells
            .iter()
            .map(|c| if is_missing(c) { None } else { parse_number(c) })
            .collect();
        let mut present: Vec<f64> = parsed.iter().flatten().copied().collect();
        let missing = parsed.len() - present.len();
        let fill = median(&mut present);
        let values = parsed.into_iter().map(|v| v.unwrap_or(fill)).collect();
        let mut meta = FeatureMeta::numeric(name);
        if missing > 0 {
            meta.description = format!("[{missing} missing imputed with median {fill}]");
        }
        (meta, values)
    } else {
        let mut codes: BTreeMap<&str, usize> = BTreeMap::new();
        let mut categories = Vec::new();
        let values = cells
            .iter()
            .map(|c| {
                let next = codes.len();
                let code = *codes.entry(c.as_str()).or_insert_with(|| {
                    categories.push(c.clone());
                    next
                });
                code as f64
            })
            .collect();
        let meta = FeatureMeta {
            name: name.to_string(),
            kind: FeatureKind::Categorical,
            description: String::new(),
            origin: Origin::Original,
            categories,
        };
        (meta, values)
    }
}

/// Assignment of rows to `k` cross-validation folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    assignments: Vec<usize>,
}

impl FoldPlan {
    /// Fold index of each row.
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&r| self.assignments[r] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&r| self.assignments[r] != fold)
            .collect()
    }
}

/// Deterministic k-fold split, stratified by class when every class has at
/// least `k` rows.
pub fn make_folds(d: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    let n = d.n_rows();
    if k < 2 || n < k {
        return Err(TabularError::TooManyFolds { k, rows: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); d.n_classes()];
    for (row, &c) in d.target().iter().enumerate() {
        per_class[c].push(row);
    }
    let stratified = per_class.iter().all(|rows| rows.is_empty() || rows.len() >= k);
    let order: Vec<usize> = if stratified {
        per_class
            .into_iter()
            .flat_map(|mut rows| {
                rows.shuffle(&mut rng);
                rows
            })
            .collect()
    } else {
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        rows
    };
    // Dealing the concatenated order round-robin keeps every class spread
    // evenly and total fold sizes within one of each other.
    let mut assignments = vec![0; n];
    for (pos, row) in order.into_iter().enumerate() {
        assignments[row] = pos % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        stratified,
        assignments,
    })
}

/// Stratified train/test split. Returns `(train_rows, test_rows)`, each in
/// ascending row order. A `test_fraction` of zero yields an empty test set.
pub fn holdout_split(d: &Dataset, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7e57);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); d.n_classes()];
    for (row, &c) in d.target().iter().enumerate() {
        per_class[c].push(row);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut rows in per_class {
        rows.shuffle(&mut rng);
        let n_test = ((rows.len() as f64) * test_fraction.clamp(0.0, 1.0)).round() as usize;
        // every class keeps at least one training row
        let n_test = n_test.min(rows.len().saturating_sub(1));
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
