//! Poison-filtering defenses over an explanation-reduced feature space:
//! spectral signatures, density clustering with silhouette-driven removal,
//! and isolation forests, plus the filtered-retrain evaluation loop.
//!
//! All filters operate on benign rows only; the reduced space is built
//! from a model trained on the defender's trusted clean data.

mod hdbscan;
mod isoforest;

pub use hdbscan::{adjusted_rand_index, cluster_labels, ClusterLabels};
pub use isoforest::{average_path_length, score_from_depth, IsolationForest};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    feature_importance, select_features, AttackError, ImportanceMode, SelectionMode,
};
use crate::dataset::Dataset;
use crate::explain::ShapMatrix;
use crate::matrix::Matrix;
use crate::models::{evaluate, train, ModelError, TrainConfig, TrainedModel, DEFAULT_THRESHOLD};
use crate::rng::rng_from;
use rand::Rng;

#[derive(Error, Debug)]
pub enum DefendError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("cannot reduce to {k} features, dataset has {available}")]
    KTooLarge { k: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("filtering removed an entire class; cannot retrain")]
    ClassCollapse,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

pub const DEFAULT_REDUCED_FEATURES: usize = 32;
pub const DEFAULT_SPECTRAL_FRACTION: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    #[serde(alias = "spectral")]
    SpectralSignature,
    #[serde(alias = "hdbscan")]
    DensityClustering,
    #[serde(alias = "iforest")]
    IsolationForest,
}

impl DefenseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DefenseKind::SpectralSignature => "spectral_signature",
            DefenseKind::DensityClustering => "density_clustering",
            DefenseKind::IsolationForest => "isolation_forest",
        }
    }
}

impl std::str::FromStr for DefenseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spectral" | "spectral_signature" => Ok(DefenseKind::SpectralSignature),
            "hdbscan" | "density_clustering" => Ok(DefenseKind::DensityClustering),
            "isolation_forest" | "iforest" => Ok(DefenseKind::IsolationForest),
            other => Err(format!("unknown defense '{other}'")),
        }
    }
}

/// Benign rows projected onto the defender's top-k important features and
/// standardized per feature to [-1, 1].
#[derive(Clone, Debug)]
pub struct ReducedSpace {
    pub selected_features: Vec<usize>,
    /// Per selected feature: (min, max) of the rows being filtered.
    pub scale: Vec<(f64, f64)>,
    pub matrix: Matrix,
    pub row_ids: Vec<u64>,
}

/// What a filter removed, scored against ground truth when available.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterReport {
    pub defense: DefenseKind,
    pub removed_ids: Vec<u64>,
    pub poisons_removed: usize,
    pub goodware_removed: usize,
    pub post_defense_acc_fb_xb: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl FilterReport {
    fn new(defense: DefenseKind, removed_ids: Vec<u64>) -> Self {
        FilterReport {
            defense,
            removed_ids,
            poisons_removed: 0,
            goodware_removed: 0,
            post_defense_acc_fb_xb: None,
            notes: Vec::new(),
        }
    }

    /// Splits the removal count into true poisons and clean goodware.
    pub fn score_against(&mut self, poison_ids: &[u64]) {
        let poisons: std::collections::HashSet<&u64> = poison_ids.iter().collect();
        self.poisons_removed = self
            .removed_ids
            .iter()
            .filter(|id| poisons.contains(id))
            .count();
        self.goodware_removed = self.removed_ids.len() - self.poisons_removed;
    }
}

/// Projects the benign rows onto the k features with the largest-magnitude
/// importance in the clean model's attributions, then standardizes each
/// column to [-1, 1] (constant columns map to 0).
pub fn reduce_space(
    train_benign: &Dataset,
    clean_shap: &ShapMatrix,
    k: usize,
) -> Result<ReducedSpace, DefendError> {
    if k > train_benign.n_features() {
        return Err(DefendError::KTooLarge {
            k,
            available: train_benign.n_features(),
        });
    }
    if k == 0 {
        return Err(DefendError::InvalidConfig("k must be >= 1".into()));
    }
    let importance = feature_importance(clean_shap, ImportanceMode::Absolute)?;
    let selected = select_features(&importance, k, SelectionMode::LargestMagnitude)?;

    let n = train_benign.n_rows();
    let mut scale = Vec::with_capacity(k);
    for &f in &selected {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in train_benign.features().col(f) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        scale.push((lo, hi));
    }
    let mut matrix = Matrix::zeros(n, k);
    for i in 0..n {
        let row = train_benign.row(i);
        for (j, (&f, &(lo, hi))) in selected.iter().zip(&scale).enumerate() {
            let v = if hi > lo {
                2.0 * (row[f] - lo) / (hi - lo) - 1.0
            } else {
                0.0
            };
            matrix.set(i, j, v);
        }
    }
    Ok(ReducedSpace {
        selected_features: selected,
        scale,
        matrix,
        row_ids: train_benign.ids().to_vec(),
    })
}

/// Top eigenvector of a symmetric PSD matrix by power iteration
/// (200 iterations or 1e-10 movement), from a deterministic start.
pub fn power_iteration_top_eigenvector(gram: &Matrix) -> Vec<f64> {
    let k = gram.n_rows();
    let mut rng = rng_from(0x51ec_71a1);
    let mut v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut next = vec![0.0; k];
    for _ in 0..200 {
        for (i, out) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &vj) in v.iter().enumerate() {
                acc += gram.get(i, j) * vj;
            }
            *out = acc;
        }
        let norm = normalize(&mut next);
        if norm == 0.0 {
            // zero matrix: any direction works
            return v;
        }
        let moved: f64 = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .min(
                v.iter()
                    .zip(&next)
                    .map(|(a, b)| (a + b) * (a + b))
                    .sum::<f64>(),
            );
        std::mem::swap(&mut v, &mut next);
        if moved.sqrt() < 1e-10 {
            break;
        }
    }
    v
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Spectral-signature filter: centers the reduced matrix, scores each row
/// by its squared projection onto the top right singular vector, and
/// removes exactly ceil(fraction * n) of the highest scorers.
pub fn spectral_filter(
    rs: &ReducedSpace,
    remove_fraction: f64,
) -> Result<FilterReport, DefendError> {
    let n = rs.matrix.n_rows();
    if n < 2 {
        return Err(DefendError::TooFewRows { needed: 2, got: n });
    }
    if !(remove_fraction > 0.0 && remove_fraction <= 1.0) {
        return Err(DefendError::InvalidConfig(format!(
            "remove_fraction {remove_fraction} outside (0,1]"
        )));
    }
    let k = rs.matrix.n_cols();
    let means = rs.matrix.col_means();
    let mut centered = rs.matrix.clone();
    for i in 0..n {
        let row = centered.row_mut(i);
        for (v, m) in row.iter_mut().zip(&means) {
            *v -= m;
        }
    }
    // top right singular vector of the centered matrix = top eigenvector
    // of its k x k gram product
    let mut gram = Matrix::zeros(k, k);
    for row in centered.rows() {
        for i in 0..k {
            if row[i] == 0.0 {
                continue;
            }
            for j in i..k {
                gram.set(i, j, gram.get(i, j) + row[i] * row[j]);
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            gram.set(i, j, gram.get(j, i));
        }
    }
    let u = power_iteration_top_eigenvector(&gram);
    let scores: Vec<f64> = centered
        .rows()
        .map(|row| {
            let p: f64 = row.iter().zip(&u).map(|(a, b)| a * b).sum();
            p * p
        })
        .collect();

    let count = (remove_fraction * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    let removed_ids: Vec<u64> = order.iter().map(|&i| rs.row_ids[i]).collect();

    let mut report = FilterReport::new(DefenseKind::SpectralSignature, removed_ids);
    if scores.iter().all(|&s| s <= f64::EPSILON) {
        report
            .notes
            .push("degenerate matrix: all scores zero, removal fell back to row order".into());
    }
    Ok(report)
}

/// Density-clustering filter: HDBSCAN-style leaf clusters over the reduced
/// space, then each member of a cluster is dropped independently with
/// probability equal to the cluster's mean silhouette (clamped to [0,1]).
/// Noise points are never removed.
pub fn density_cluster_filter(
    rs: &ReducedSpace,
    min_cluster_fraction: f64,
    min_samples_fraction: f64,
    seed: u64,
) -> Result<FilterReport, DefendError> {
    let n = rs.matrix.n_rows();
    let min_cluster_size = ((min_cluster_fraction * n as f64).round() as usize).max(2);
    let min_samples = ((min_samples_fraction * n as f64).round() as usize).max(1);
    if n < min_cluster_size {
        return Err(DefendError::TooFewRows {
            needed: min_cluster_size,
            got: n,
        });
    }
    let labels = cluster_labels(&rs.matrix, min_cluster_size, min_samples);
    let silhouettes = hdbscan::cluster_silhouettes(&rs.matrix, &labels);

    let mut rng = rng_from(seed);
    let mut removed_ids = Vec::new();
    for i in 0..n {
        // draw per row regardless of membership to keep the stream aligned
        let u: f64 = rng.gen();
        if let Some(c) = labels.assignments[i] {
            let p = silhouettes[c].clamp(0.0, 1.0);
            if u < p {
                removed_ids.push(rs.row_ids[i]);
            }
        }
    }
    let mut report = FilterReport::new(DefenseKind::DensityClustering, removed_ids);
    report.notes.push(format!(
        "clusters={} noise={} min_cluster_size={min_cluster_size} min_samples={min_samples}",
        labels.n_clusters,
        labels.assignments.iter().filter(|a| a.is_none()).count()
    ));
    Ok(report)
}

/// Isolation-forest filter: standard anomaly scores over the reduced
/// space; rows scoring above 0.5 are flagged.
pub fn isolation_forest_filter(
    rs: &ReducedSpace,
    n_trees: usize,
    subsample: usize,
    seed: u64,
) -> Result<FilterReport, DefendError> {
    let n = rs.matrix.n_rows();
    if n < 2 {
        return Err(DefendError::TooFewRows { needed: 2, got: n });
    }
    if n_trees == 0 || subsample < 2 {
        return Err(DefendError::InvalidConfig(
            "need n_trees >= 1 and subsample >= 2".into(),
        ));
    }
    let forest = IsolationForest::fit(&rs.matrix, n_trees, subsample.min(n), seed);
    let removed_ids: Vec<u64> = (0..n)
        .filter(|&i| forest.score(rs.matrix.row(i)) > 0.5)
        .map(|i| rs.row_ids[i])
        .collect();
    Ok(FilterReport::new(DefenseKind::IsolationForest, removed_ids))
}

/// Drops the removed rows, retrains with the same config, and evaluates on
/// the watermarked malware set.
pub fn retrain_after_filter(
    train_ds: &Dataset,
    report: &FilterReport,
    cfg: &TrainConfig,
    xb: &Dataset,
) -> Result<(TrainedModel, f64), DefendError> {
    let removed: std::collections::HashSet<&u64> = report.removed_ids.iter().collect();
    let keep: Vec<usize> = (0..train_ds.n_rows())
        .filter(|&i| !removed.contains(&train_ds.id(i)))
        .collect();
    let filtered = train_ds.select_rows(&keep);
    if !filtered.has_both_classes() {
        return Err(DefendError::ClassCollapse);
    }
    let model = train(&filtered, cfg)?;
    let acc = evaluate(&model, xb, DEFAULT_THRESHOLD)?.accuracy;
    Ok((model, acc))
}

#[cfg(test)]
mod tests;
