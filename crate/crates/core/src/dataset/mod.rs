//! Labeled feature matrices, per-feature constraint metadata, synthetic
//! generation, splitting, and benign value tables.
//!
//! Values are stored as `f64` uniformly; integer/boolean semantics are
//! enforced by validation, not storage. Class 0 is benign (goodware),
//! class 1 is malicious (malware).

mod io;
mod synth;

pub use io::{load_csv, load_specs, save_csv, save_specs};
pub use synth::generate_synthetic;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng::rng_from;
use rand::seq::SliceRandom;

#[derive(Error, Debug)]
pub enum DatasetError {
    #[error("csv parse failure at row {row}: {message}")]
    MalformedCsv { row: usize, message: String },
    #[error("label {value} outside {{0,1}} at row {row}")]
    BadLabel { row: usize, value: f64 },
    #[error("feature specs describe {spec} columns but csv has {csv} (column mismatch: {detail})")]
    SpecMismatch {
        spec: usize,
        csv: usize,
        detail: String,
    },
    #[error("non-integral value {value} in {kind} column '{column}' at row {row}")]
    NonIntegralValue {
        column: String,
        row: usize,
        value: f64,
        kind: String,
    },
    #[error("boolean column '{column}' holds {value} at row {row}; only 0/1 allowed")]
    BadBoolean {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("non-finite value in column '{column}' at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("duplicate row id {id}")]
    DuplicateId { id: u64 },
    #[error("labels length {labels} does not match {rows} rows")]
    LabelLength { labels: usize, rows: usize },
    #[error("fixed-constraint feature '{0}' cannot be modifiable")]
    FixedButModifiable(String),
    #[error("dataset has no benign rows")]
    NoBenignRows,
    #[error("dataset has a single class only")]
    SingleClass,
    #[error("split leaves one side empty (train_fraction {0})")]
    DegenerateSplit(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Real,
    Integer,
    Boolean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Free,
    AdditiveOnly,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    Any,
    ObservedBenignOnly,
}

/// Per-feature metadata: storage kind plus the problem-space feasibility
/// rules the attacker must honor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub index: usize,
    pub name: String,
    pub kind: FeatureKind,
    pub modifiable: bool,
    pub constraint: Constraint,
    pub value_domain: ValueDomain,
}

impl FeatureSpec {
    pub fn new(index: usize, name: impl Into<String>, kind: FeatureKind) -> Self {
        FeatureSpec {
            index,
            name: name.into(),
            kind,
            modifiable: true,
            constraint: Constraint::Free,
            value_domain: ValueDomain::ObservedBenignOnly,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.constraint == Constraint::Fixed && self.modifiable {
            return Err(DatasetError::FixedButModifiable(self.name.clone()));
        }
        Ok(())
    }
}

pub const BENIGN: u8 = 0;
pub const MALWARE: u8 = 1;

/// Immutable labeled feature matrix with per-feature specs and stable row ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<u8>,
    specs: Vec<FeatureSpec>,
    ids: Vec<u64>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<u8>,
        specs: Vec<FeatureSpec>,
        ids: Vec<u64>,
    ) -> Result<Self, DatasetError> {
        if labels.len() != features.n_rows() {
            return Err(DatasetError::LabelLength {
                labels: labels.len(),
                rows: features.n_rows(),
            });
        }
        if specs.len() != features.n_cols() {
            return Err(DatasetError::SpecMismatch {
                spec: specs.len(),
                csv: features.n_cols(),
                detail: "spec count != feature count".into(),
            });
        }
        if ids.len() != features.n_rows() {
            return Err(DatasetError::LabelLength {
                labels: ids.len(),
                rows: features.n_rows(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for &id in &ids {
            if !seen.insert(id) {
                return Err(DatasetError::DuplicateId { id });
            }
        }
        for spec in &specs {
            spec.validate()?;
        }
        for (row_idx, row) in features.rows().enumerate() {
            for (spec, &v) in specs.iter().zip(row) {
                if !v.is_finite() {
                    return Err(DatasetError::NonFinite {
                        column: spec.name.clone(),
                        row: row_idx,
                    });
                }
                match spec.kind {
                    FeatureKind::Integer if v.fract() != 0.0 => {
                        return Err(DatasetError::NonIntegralValue {
                            column: spec.name.clone(),
                            row: row_idx,
                            value: v,
                            kind: "integer".into(),
                        });
                    }
                    FeatureKind::Boolean if v != 0.0 && v != 1.0 => {
                        return Err(DatasetError::BadBoolean {
                            column: spec.name.clone(),
                            row: row_idx,
                            value: v,
                        });
                    }
                    _ => {}
                }
            }
        }
        for (row_idx, &l) in labels.iter().enumerate() {
            if l > 1 {
                return Err(DatasetError::BadLabel {
                    row: row_idx,
                    value: l as f64,
                });
            }
        }
        Ok(Dataset {
            features,
            labels,
            specs,
            ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn id(&self, i: usize) -> u64 {
        self.ids[i]
    }

    pub fn row_index_of_id(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn benign_indices(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.labels[i] == BENIGN).collect()
    }

    pub fn malware_indices(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.labels[i] == MALWARE).collect()
    }

    pub fn has_both_classes(&self) -> bool {
        let mut seen = [false; 2];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        seen[0] && seen[1]
    }

    /// New dataset keeping only the given row indices (original order preserved
    /// as given).
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            specs: self.specs.clone(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Replaces the feature vector of row `i`, keeping label and id.
    pub fn replace_row(&mut self, i: usize, values: &[f64]) {
        assert_eq!(values.len(), self.n_features());
        self.features.row_mut(i).copy_from_slice(values);
    }

    /// Seeded stratified subsample of `fraction` of the rows.
    pub fn stratified_subsample(&self, fraction: f64, seed: u64) -> Result<Dataset, DatasetError> {
        if !(0.0..=1.0).contains(&fraction) || fraction == 0.0 {
            return Err(DatasetError::InvalidConfig(format!(
                "subsample fraction {fraction} outside (0,1]"
            )));
        }
        let mut rng = rng_from(seed);
        let mut keep = Vec::new();
        for class in [BENIGN, MALWARE] {
            let mut idx: Vec<usize> = (0..self.n_rows())
                .filter(|&i| self.labels[i] == class)
                .collect();
            idx.shuffle(&mut rng);
            let take = ((idx.len() as f64) * fraction).round() as usize;
            keep.extend_from_slice(&idx[..take.min(idx.len())]);
        }
        keep.sort_unstable();
        Ok(self.select_rows(&keep))
    }
}

/// Quantizes a stored value for counting/equality. Real-kind features are
/// rounded to 6 decimal places so value frequencies are well-defined;
/// integer and boolean kinds are already discrete.
pub fn quantize(kind: FeatureKind, v: f64) -> f64 {
    let q = match kind {
        FeatureKind::Real => (v * 1e6).round() / 1e6,
        FeatureKind::Integer | FeatureKind::Boolean => v,
    };
    if q == 0.0 {
        0.0 // collapse -0.0
    } else {
        q
    }
}

/// True when two stored values count as the same watermark value.
pub fn values_match(kind: FeatureKind, a: f64, b: f64) -> bool {
    quantize(kind, a) == quantize(kind, b)
}

/// Total-order key over quantized values; keys sort ascending so ties break
/// toward the smaller value everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueKey(pub f64);

impl Eq for ValueKey {}

impl PartialOrd for ValueKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ValueKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Per-feature map from observed benign value to its occurrence count.
#[derive(Clone, Debug)]
pub struct BenignValueTable {
    tables: Vec<BTreeMap<ValueKey, usize>>,
    n_benign: usize,
}

impl BenignValueTable {
    pub fn feature(&self, idx: usize) -> &BTreeMap<ValueKey, usize> {
        &self.tables[idx]
    }

    pub fn n_benign(&self) -> usize {
        self.n_benign
    }

    pub fn count(&self, feature: usize, kind: FeatureKind, value: f64) -> usize {
        self.tables[feature]
            .get(&ValueKey(quantize(kind, value)))
            .copied()
            .unwrap_or(0)
    }

    pub fn contains(&self, feature: usize, kind: FeatureKind, value: f64) -> bool {
        self.count(feature, kind, value) > 0
    }
}

/// Counts every distinct value appearing in a benign row, per feature.
/// Duplicate feature vectors are counted per-row, without deduplication.
pub fn benign_value_table(ds: &Dataset) -> Result<BenignValueTable, DatasetError> {
    let benign = ds.benign_indices();
    if benign.is_empty() {
        return Err(DatasetError::NoBenignRows);
    }
    let mut tables = vec![BTreeMap::new(); ds.n_features()];
    for &i in &benign {
        let row = ds.row(i);
        for (j, spec) in ds.specs().iter().enumerate() {
            let key = ValueKey(quantize(spec.kind, row[j]));
            *tables[j].entry(key).or_insert(0) += 1;
        }
    }
    Ok(BenignValueTable {
        tables,
        n_benign: benign.len(),
    })
}

/// Train/test split parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub stratified: bool,
}

fn default_true() -> bool {
    true
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DatasetError::InvalidConfig(format!(
                "train_fraction {} outside (0,1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Splits into disjoint train/test datasets. Row order within each side
/// follows the original dataset order.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), DatasetError> {
    spec.validate()?;
    if !ds.has_both_classes() {
        return Err(DatasetError::SingleClass);
    }
    let mut rng = rng_from(spec.seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    if spec.stratified {
        for class in [BENIGN, MALWARE] {
            let mut idx: Vec<usize> = (0..ds.n_rows())
                .filter(|&i| ds.label(i) == class)
                .collect();
            idx.shuffle(&mut rng);
            let take = ((idx.len() as f64) * spec.train_fraction).round() as usize;
            train_idx.extend_from_slice(&idx[..take]);
            test_idx.extend_from_slice(&idx[take..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.n_rows()).collect();
        idx.shuffle(&mut rng);
        let take = ((idx.len() as f64) * spec.train_fraction).round() as usize;
        train_idx.extend_from_slice(&idx[..take]);
        test_idx.extend_from_slice(&idx[take..]);
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(DatasetError::DegenerateSplit(spec.train_fraction));
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.select_rows(&train_idx), ds.select_rows(&test_idx)))
}

/// Synthetic two-class generator configuration.
///
/// Benign rows come from `benign_subpopulations` wide Gaussian clusters
/// (per-cluster scale in [1,3]); malware from fewer, tighter clusters
/// (scale in [0.3,1]) offset by `class_separation` along the informative
/// dimensions. Non-informative dimensions are shared N(0,1) noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_informative: usize,
    #[serde(default = "default_subpops")]
    pub benign_subpopulations: usize,
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    #[serde(default = "default_int_fraction")]
    pub integer_feature_fraction: f64,
    pub seed: u64,
}

fn default_subpops() -> usize {
    4
}

fn default_separation() -> f64 {
    4.0
}

fn default_int_fraction() -> f64 {
    0.7
}

impl SynthConfig {
    /// The standard desk-scale corpus: 10k rows, 30 integer-valued
    /// features, every dimension weakly informative, so the class signal
    /// lives in the joint pattern rather than any single column.
    pub fn desk_scale(seed: u64) -> Self {
        SynthConfig {
            n_samples: 10_000,
            n_features: 30,
            n_informative: 30,
            benign_subpopulations: 4,
            class_separation: 8.0,
            integer_feature_fraction: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_samples < 4 {
            return Err(DatasetError::InvalidConfig("n_samples < 4".into()));
        }
        if self.n_features == 0 {
            return Err(DatasetError::InvalidConfig("n_features = 0".into()));
        }
        if self.n_informative > self.n_features {
            return Err(DatasetError::InvalidConfig(format!(
                "n_informative {} > n_features {}",
                self.n_informative, self.n_features
            )));
        }
        if self.benign_subpopulations == 0 {
            return Err(DatasetError::InvalidConfig("benign_subpopulations = 0".into()));
        }
        if self.class_separation.is_nan() || self.class_separation <= 0.0 {
            return Err(DatasetError::InvalidConfig("class_separation must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.integer_feature_fraction) {
            return Err(DatasetError::InvalidConfig(
                "integer_feature_fraction outside [0,1]".into(),
            ));
        }
        Ok(())
    }
}
