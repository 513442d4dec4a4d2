//! Desk-scale victim-model zoo behind a uniform train / predict / margin
//! interface: logistic regression, linear SVM, random forest, gradient
//! boosted trees, and a small feed-forward net.
//!
//! The margin is the real-valued decision score; for every kind except the
//! random forest it is the quantity the logistic transform maps to the
//! class-1 probability. All training randomness flows from the config seed
//! through a counter-based generator.

mod gbdt;
mod linear;
mod net;
mod tree;

pub use gbdt::Gbdt;
pub use linear::LinearModel;
pub use net::{train_net_traced, FeedForwardNet};
pub use tree::{DecisionTree, RandomForest, TreeNode};

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::rng::mix64;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("training data is empty")]
    EmptyData,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("feature count mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("model persistence: {0}")]
    Persistence(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    LinearSvm,
    RandomForest,
    GradientBoostedTrees,
    FeedForwardNet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::LogisticRegression,
        ModelKind::LinearSvm,
        ModelKind::RandomForest,
        ModelKind::GradientBoostedTrees,
        ModelKind::FeedForwardNet,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::LinearSvm => "linear_svm",
            ModelKind::RandomForest => "random_forest",
            ModelKind::GradientBoostedTrees => "gradient_boosted_trees",
            ModelKind::FeedForwardNet => "feed_forward_net",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic_regression" => Ok(ModelKind::LogisticRegression),
            "linear_svm" => Ok(ModelKind::LinearSvm),
            "random_forest" => Ok(ModelKind::RandomForest),
            "gradient_boosted_trees" => Ok(ModelKind::GradientBoostedTrees),
            "feed_forward_net" => Ok(ModelKind::FeedForwardNet),
            other => Err(format!("unknown model kind '{other}'")),
        }
    }
}

/// Tree-ensemble hyperparameters (random forest and GBDT).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeParams {
    pub n_trees: usize,
    pub max_leaves: usize,
    pub learning_rate: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            n_trees: 50,
            max_leaves: 31,
            learning_rate: 0.1,
        }
    }
}

/// Feed-forward net hyperparameters. Three ReLU hidden layers into a
/// sigmoid output; inputs are standardized per feature in place of batch
/// normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetParams {
    pub layer_widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
}

impl Default for NetParams {
    fn default() -> Self {
        NetParams {
            layer_widths: vec![64, 32, 16],
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.05,
            dropout_rate: 0.5,
        }
    }
}

/// Linear-model hyperparameters (logistic regression and linear SVM).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            epochs: 200,
            learning_rate: 0.1,
            l2: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub seed: u64,
    #[serde(default)]
    pub trees: TreeParams,
    #[serde(default)]
    pub net: NetParams,
    #[serde(default)]
    pub linear: LinearParams,
}

impl TrainConfig {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        TrainConfig {
            kind,
            seed,
            trees: TreeParams::default(),
            net: NetParams::default(),
            linear: LinearParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.trees.n_trees == 0 || self.trees.max_leaves < 2 {
            return Err(ModelError::InvalidConfig(
                "tree ensembles need n_trees >= 1, max_leaves >= 2".into(),
            ));
        }
        let bad_rate = |r: f64| r.is_nan() || r <= 0.0;
        if bad_rate(self.trees.learning_rate)
            || bad_rate(self.net.learning_rate)
            || bad_rate(self.linear.learning_rate)
        {
            return Err(ModelError::InvalidConfig("learning rates must be > 0".into()));
        }
        if self.net.layer_widths.contains(&0) || self.net.layer_widths.is_empty() {
            return Err(ModelError::InvalidConfig("layer widths must be >= 1".into()));
        }
        if self.net.batch_size == 0 || self.net.epochs == 0 || self.linear.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs/batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.net.dropout_rate) {
            return Err(ModelError::InvalidConfig("dropout_rate outside [0,1)".into()));
        }
        if self.linear.l2 < 0.0 {
            return Err(ModelError::InvalidConfig("l2 must be >= 0".into()));
        }
        Ok(())
    }

    /// Stable hash of the canonical JSON form, recorded on trained models.
    pub fn config_hash(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        mix64(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelParams {
    Linear(LinearModel),
    RandomForest(RandomForest),
    Gbdt(Gbdt),
    Net(FeedForwardNet),
}

/// A trained classifier. `margin` is the decision score (logit-like);
/// `predict_proba` maps it to a class-1 probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub n_features: usize,
    pub seed: u64,
    pub config_hash: u64,
    pub params: ModelParams,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Margin used for probability-only models: the forest's mean leaf
/// frequency clamped away from 0/1, mapped through the logit.
const PROB_CLAMP: f64 = 1e-9;

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel, ModelError> {
    cfg.validate()?;
    if ds.n_rows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if !ds.has_both_classes() {
        return Err(ModelError::SingleClass);
    }
    let params = match cfg.kind {
        ModelKind::LogisticRegression => {
            ModelParams::Linear(linear::train_logistic(ds, &cfg.linear, cfg.seed))
        }
        ModelKind::LinearSvm => ModelParams::Linear(linear::train_svm(ds, &cfg.linear, cfg.seed)),
        ModelKind::RandomForest => {
            ModelParams::RandomForest(tree::train_forest(ds, &cfg.trees, cfg.seed))
        }
        ModelKind::GradientBoostedTrees => ModelParams::Gbdt(gbdt::train_gbdt(ds, &cfg.trees)),
        ModelKind::FeedForwardNet => ModelParams::Net(net::train_net(ds, &cfg.net, cfg.seed)),
    };
    Ok(TrainedModel {
        kind: cfg.kind,
        n_features: ds.n_features(),
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        params,
    })
}

impl TrainedModel {
    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(())
    }

    /// Real-valued decision score. Class 1 iff the score clears the
    /// threshold-equivalent logit.
    pub fn margin(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_input(x)?;
        Ok(self.margin_unchecked(x))
    }

    #[inline]
    pub(crate) fn margin_unchecked(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Linear(m) => m.margin(x),
            ModelParams::Gbdt(m) => m.margin(x),
            ModelParams::Net(m) => m.margin(x),
            ModelParams::RandomForest(m) => {
                let p = m.probability(x).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                logit(p)
            }
        }
    }

    /// Margins for many rows; row-major input of `n_features` columns.
    pub fn margin_batch(&self, rows: &[f64], n_features: usize) -> Result<Vec<f64>, ModelError> {
        if n_features != self.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features,
                got: n_features,
            });
        }
        Ok(rows
            .chunks_exact(n_features)
            .map(|r| self.margin_unchecked(r))
            .collect())
    }

    /// Probability of class 1 (malware).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_input(x)?;
        Ok(match &self.params {
            ModelParams::RandomForest(m) => m.probability(x),
            _ => logistic(self.margin_unchecked(x)),
        })
    }

    pub fn predict_label(&self, x: &[f64], threshold: f64) -> Result<u8, ModelError> {
        Ok((self.predict_proba(x)? >= threshold) as u8)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = File::create(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut w = BufWriter::new(file);
        let doc = PersistedModel {
            schema_version: 1,
            model: self.clone(),
        };
        serde_json::to_writer_pretty(&mut w, &doc)
            .map_err(|e| ModelError::Persistence(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainedModel, ModelError> {
        let file = File::open(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let doc: PersistedModel = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| ModelError::Persistence(e.to_string()))?;
        if doc.schema_version != 1 {
            return Err(ModelError::Persistence(format!(
                "unsupported model schema_version {}",
                doc.schema_version
            )));
        }
        Ok(doc.model)
    }
}

#[derive(Serialize, Deserialize)]
struct PersistedModel {
    schema_version: u32,
    model: TrainedModel,
}

/// Confusion-matrix metrics at a fixed probability threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub threshold: f64,
}

pub fn evaluate(m: &TrainedModel, ds: &Dataset, threshold: f64) -> Result<EvalMetrics, ModelError> {
    if ds.n_rows() == 0 {
        return Err(ModelError::EmptyData);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..ds.n_rows() {
        let pred = m.predict_label(ds.row(i), threshold)?;
        match (ds.label(i), pred) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (0, 0) => tn += 1,
            (1, 0) => fn_ += 1,
            _ => unreachable!(),
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalMetrics {
        accuracy: (tp + tn) as f64 / ds.n_rows() as f64,
        f1,
        fp_rate: ratio(fp, fp + tn),
        fn_rate: ratio(fn_, fn_ + tp),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureKind, FeatureSpec};
    use crate::matrix::Matrix;

    pub(crate) fn separable_dataset() -> Dataset {
        // class 1 iff f0 > 0, comfortably separated
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            rows.push(vec![sign * (1.0 + (i % 5) as f64 * 0.1), (i % 7) as f64 * 0.01]);
            labels.push(if sign > 0.0 { 1 } else { 0 });
        }
        let specs = vec![
            FeatureSpec::new(0, "f0", FeatureKind::Real),
            FeatureSpec::new(1, "f1", FeatureKind::Real),
        ];
        Dataset::new(Matrix::from_rows(&rows), labels, specs, (0..40).collect()).unwrap()
    }

    #[test]
    fn logistic_regression_fits_separable_data() {
        let ds = separable_dataset();
        let cfg = TrainConfig::new(ModelKind::LogisticRegression, 3);
        let m = train(&ds, &cfg).unwrap();
        let metrics = evaluate(&m, &ds, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(metrics.accuracy, 1.0);
    }

    #[test]
    fn training_rejects_single_class() {
        let ds = separable_dataset();
        let benign_only = ds.select_rows(&ds.benign_indices());
        let cfg = TrainConfig::new(ModelKind::LogisticRegression, 3);
        assert!(matches!(train(&benign_only, &cfg), Err(ModelError::SingleClass)));
    }

    #[test]
    fn training_is_deterministic_for_fixed_seed() {
        let ds = separable_dataset();
        for kind in ModelKind::ALL {
            let mut cfg = TrainConfig::new(kind, 11);
            cfg.net.epochs = 3; // keep the net fast
            let a = train(&ds, &cfg).unwrap();
            let b = train(&ds, &cfg).unwrap();
            assert_eq!(a, b, "{kind:?} not deterministic");
        }
    }

    #[test]
    fn margin_probability_logistic_link() {
        let ds = separable_dataset();
        for kind in ModelKind::ALL {
            let mut cfg = TrainConfig::new(kind, 5);
            cfg.net.epochs = 3;
            let m = train(&ds, &cfg).unwrap();
            let x = ds.row(0);
            let p = m.predict_proba(x).unwrap();
            let z = m.margin(x).unwrap();
            assert!(
                (p - logistic(z)).abs() < 2e-6,
                "{kind:?}: proba {p} vs logistic(margin) {}",
                logistic(z)
            );
            let label = m.predict_label(x, DEFAULT_THRESHOLD).unwrap();
            assert_eq!(label == 1, p >= DEFAULT_THRESHOLD);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ds = separable_dataset();
        let m = train(&ds, &TrainConfig::new(ModelKind::LogisticRegression, 1)).unwrap();
        assert!(matches!(
            m.margin(&[1.0]),
            Err(ModelError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(m.margin(&[f64::NAN, 0.0]), Err(ModelError::NonFinite)));
    }

    #[test]
    fn evaluate_hand_confusion() {
        // 4 samples, (TP,FP,TN,FN) = (1,1,1,1) -> accuracy .5, fp .5, fn .5
        let rows = vec![vec![1.0], vec![1.0], vec![-1.0], vec![-1.0]];
        let labels = vec![1, 0, 0, 1];
        let specs = vec![FeatureSpec::new(0, "f0", FeatureKind::Real)];
        let ds = Dataset::new(Matrix::from_rows(&rows), labels, specs, (0..4).collect()).unwrap();
        // hand-built model: predicts 1 iff f0 > 0
        let m = TrainedModel {
            kind: ModelKind::LogisticRegression,
            n_features: 1,
            seed: 0,
            config_hash: 0,
            params: ModelParams::Linear(LinearModel {
                weights: vec![10.0],
                bias: 0.0,
            }),
        };
        let e = evaluate(&m, &ds, 0.5).unwrap();
        assert_eq!(e.accuracy, 0.5);
        assert_eq!(e.fp_rate, 0.5);
        assert_eq!(e.fn_rate, 0.5);
        assert!((e.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_logistic_regression_is_half() {
        let m = TrainedModel {
            kind: ModelKind::LogisticRegression,
            n_features: 2,
            seed: 0,
            config_hash: 0,
            params: ModelParams::Linear(LinearModel {
                weights: vec![0.0, 0.0],
                bias: 0.0,
            }),
        };
        assert_eq!(m.predict_proba(&[3.0, -9.0]).unwrap(), 0.5);
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let ds = separable_dataset();
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let mut cfg = TrainConfig::new(kind, 9);
            cfg.net.epochs = 2;
            let m = train(&ds, &cfg).unwrap();
            let path = dir.path().join(format!("{}.json", kind.as_str()));
            m.save(&path).unwrap();
            let loaded = TrainedModel::load(&path).unwrap();
            assert_eq!(m, loaded, "{kind:?} round trip");
        }
    }
}
