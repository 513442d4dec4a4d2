//! Model-agnostic Shapley-value attribution.
//!
//! Three routes to the same quantity: an exact enumeration oracle
//! (feasible to 20 features), a kernel-regression approximation that only
//! queries the model as a black box, and a closed form for linear models.
//! Attributions use an interventional value function against an explicit
//! background sample, sum (with the base value) to the model margin, and
//! follow the sign convention that positive pushes toward class 1.

mod exact;
mod kernel;

pub use exact::exact_shapley;
pub use kernel::kernel_shap;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::matrix::Matrix;
use crate::models::{LinearModel, ModelError, ModelParams, TrainedModel};
use crate::rng::{derive_seed, rng_from};
use rand::seq::SliceRandom;

#[derive(Error, Debug)]
pub enum ExplainError {
    #[error("exact enumeration supports at most {max} features, got {got}")]
    TooManyFeatures { max: usize, got: usize },
    #[error("background must contain at least one row")]
    EmptyBackground,
    #[error("background row width {got} does not match model features {expected}")]
    BackgroundWidth { expected: usize, got: usize },
    #[error("background weights invalid: {0}")]
    BadWeights(String),
    #[error("coalition budget {got} below minimum {min} (2 per feature)")]
    BudgetTooSmall { min: usize, got: usize },
    #[error(
        "singular regression system (pivot magnitude {pivot:.3e}, {rows} coalition rows, {unknowns} unknowns)"
    )]
    SingularSystem {
        pivot: f64,
        rows: usize,
        unknowns: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("linear explainer requires a linear model, got {0}")]
    NotLinear(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("shap csv: {0}")]
    Csv(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub const MAX_EXACT_FEATURES: usize = 20;
pub const DEFAULT_BACKGROUND_SIZE: usize = 100;

/// Reference rows defining the off-coalition feature distribution.
#[derive(Clone, Debug)]
pub struct Background {
    rows: Matrix,
    /// Normalized; uniform when constructed without explicit weights.
    weights: Vec<f64>,
}

impl Background {
    pub fn new(rows: Matrix, weights: Option<Vec<f64>>) -> Result<Self, ExplainError> {
        if rows.n_rows() == 0 {
            return Err(ExplainError::EmptyBackground);
        }
        let weights = match weights {
            None => vec![1.0 / rows.n_rows() as f64; rows.n_rows()],
            Some(w) => {
                if w.len() != rows.n_rows() {
                    return Err(ExplainError::BadWeights(format!(
                        "{} weights for {} rows",
                        w.len(),
                        rows.n_rows()
                    )));
                }
                if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(ExplainError::BadWeights("negative or non-finite".into()));
                }
                let sum: f64 = w.iter().sum();
                if sum <= 0.0 {
                    return Err(ExplainError::BadWeights("weights sum to zero".into()));
                }
                w.into_iter().map(|v| v / sum).collect()
            }
        };
        Ok(Background { rows, weights })
    }

    /// Seeded sample of up to `size` benign training rows; the reference
    /// distribution is the goodware population.
    pub fn benign_sample(ds: &Dataset, size: usize, seed: u64) -> Result<Self, ExplainError> {
        let mut benign = ds.benign_indices();
        if benign.is_empty() {
            return Err(ExplainError::EmptyBackground);
        }
        let mut rng = rng_from(seed);
        benign.shuffle(&mut rng);
        benign.truncate(size.max(1));
        benign.sort_unstable();
        Background::new(ds.features().select_rows(&benign), None)
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_rows(&self) -> usize {
        self.rows.n_rows()
    }

    /// Weighted mean per feature.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.rows.n_cols();
        let mut mu = vec![0.0; d];
        for (row, &w) in self.rows.rows().zip(&self.weights) {
            for (m, v) in mu.iter_mut().zip(row) {
                *m += w * v;
            }
        }
        mu
    }

    fn check_width(&self, n_features: usize) -> Result<(), ExplainError> {
        if self.rows.n_cols() != n_features {
            return Err(ExplainError::BackgroundWidth {
                expected: n_features,
                got: self.rows.n_cols(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainMethod {
    Exact,
    Kernel,
    Linear,
}

impl std::str::FromStr for ExplainMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(ExplainMethod::Exact),
            "kernel" => Ok(ExplainMethod::Kernel),
            "linear" => Ok(ExplainMethod::Linear),
            other => Err(format!("unknown explain method '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainerConfig {
    pub method: ExplainMethod,
    #[serde(default = "default_budget")]
    pub n_coalition_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bg")]
    pub background_size: usize,
}

fn default_budget() -> usize {
    2048
}

fn default_bg() -> usize {
    DEFAULT_BACKGROUND_SIZE
}

impl ExplainerConfig {
    pub fn new(method: ExplainMethod, seed: u64) -> Self {
        ExplainerConfig {
            method,
            n_coalition_samples: default_budget(),
            seed,
            background_size: default_bg(),
        }
    }
}

/// Per-sample, per-feature attributions plus the shared base value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapMatrix {
    pub values: Matrix,
    pub base_value: f64,
    pub sample_ids: Vec<u64>,
}

impl ShapMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.values.n_cols()
    }

    pub fn select_rows(&self, indices: &[usize]) -> ShapMatrix {
        ShapMatrix {
            values: self.values.select_rows(indices),
            base_value: self.base_value,
            sample_ids: indices.iter().map(|&i| self.sample_ids[i]).collect(),
        }
    }
}

/// Closed-form attribution for a linear margin `w . x + b`:
/// `phi_j = w_j (x_j - mu_j)` with `mu` the weighted background mean.
pub fn linear_shap(
    weights: &[f64],
    bias: f64,
    x: &[f64],
    bg: &Background,
) -> Result<(Vec<f64>, f64), ExplainError> {
    if weights.len() != x.len() {
        return Err(ExplainError::DimensionMismatch {
            expected: weights.len(),
            got: x.len(),
        });
    }
    bg.check_width(weights.len())?;
    let mu = bg.mean();
    let phi = weights
        .iter()
        .zip(x.iter().zip(&mu))
        .map(|(w, (xv, m))| w * (xv - m))
        .collect();
    let base = weights.iter().zip(&mu).map(|(w, m)| w * m).sum::<f64>() + bias;
    Ok((phi, base))
}

fn linear_params(model: &TrainedModel) -> Result<&LinearModel, ExplainError> {
    match &model.params {
        ModelParams::Linear(lm) => Ok(lm),
        _ => Err(ExplainError::NotLinear(model.kind.as_str().to_string())),
    }
}

/// Explains one sample with the configured method.
pub fn explain_sample(
    model: &TrainedModel,
    x: &[f64],
    bg: &Background,
    cfg: &ExplainerConfig,
) -> Result<(Vec<f64>, f64), ExplainError> {
    match cfg.method {
        ExplainMethod::Exact => exact_shapley(model, x, bg),
        ExplainMethod::Kernel => kernel_shap(model, x, bg, cfg),
        ExplainMethod::Linear => {
            let lm = linear_params(model)?;
            linear_shap(&lm.weights, lm.bias, x, bg)
        }
    }
}

/// Explains every row of `ds`. Per-sample work is independent and runs in
/// parallel; kernel sampling derives a per-row seed so results do not
/// depend on scheduling.
pub fn explain_dataset(
    model: &TrainedModel,
    ds: &Dataset,
    bg: &Background,
    cfg: &ExplainerConfig,
) -> Result<ShapMatrix, ExplainError> {
    bg.check_width(model.n_features)?;
    if ds.n_features() != model.n_features {
        return Err(ExplainError::DimensionMismatch {
            expected: model.n_features,
            got: ds.n_features(),
        });
    }
    let results: Result<Vec<(Vec<f64>, f64)>, ExplainError> = (0..ds.n_rows())
        .into_par_iter()
        .map(|i| {
            let row_cfg = ExplainerConfig {
                seed: derive_seed(cfg.seed, &[0xe49, i as u64]),
                ..*cfg
            };
            explain_sample(model, ds.row(i), bg, &row_cfg)
        })
        .collect();
    let results = results?;
    let base_value = results.first().map_or(0.0, |(_, b)| *b);
    let mut values = Matrix::zeros(ds.n_rows(), ds.n_features());
    for (i, (phi, _)) in results.iter().enumerate() {
        values.row_mut(i).copy_from_slice(phi);
    }
    Ok(ShapMatrix {
        values,
        base_value,
        sample_ids: ds.ids().to_vec(),
    })
}

/// Writes `base_value` as a leading record, then a header and one row per
/// sample: `id,<per-feature attribution...>`.
pub fn save_shap_csv(
    shap: &ShapMatrix,
    feature_names: &[String],
    path: &Path,
) -> Result<(), ExplainError> {
    let file = File::create(path).map_err(|e| ExplainError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(BufWriter::new(file));
    let err = |e: csv::Error| ExplainError::Csv(e.to_string());
    w.write_record(["base_value", &shap.base_value.to_string()])
        .map_err(err)?;
    let mut header = vec!["id".to_string()];
    header.extend_from_slice(feature_names);
    w.write_record(&header).map_err(err)?;
    for i in 0..shap.n_samples() {
        let mut rec = vec![shap.sample_ids[i].to_string()];
        rec.extend(shap.values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| ExplainError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

pub fn load_shap_csv(path: &Path) -> Result<ShapMatrix, ExplainError> {
    let file = File::open(path).map_err(|e| ExplainError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(false)
        .from_reader(BufReader::new(file));
    let mut records = r.records();
    let base_rec = records
        .next()
        .ok_or_else(|| ExplainError::Csv("empty file".into()))?
        .map_err(|e| ExplainError::Csv(e.to_string()))?;
    if base_rec.get(0) != Some("base_value") {
        return Err(ExplainError::Csv("missing base_value record".into()));
    }
    let base_value: f64 = base_rec
        .get(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ExplainError::Csv("unparseable base_value".into()))?;
    let header = records
        .next()
        .ok_or_else(|| ExplainError::Csv("missing header".into()))?
        .map_err(|e| ExplainError::Csv(e.to_string()))?;
    let n_features = header.len().saturating_sub(1);
    let mut sample_ids = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(|e| ExplainError::Csv(e.to_string()))?;
        if rec.len() != n_features + 1 {
            return Err(ExplainError::Csv(format!("row {i} width mismatch")));
        }
        sample_ids.push(
            rec.get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ExplainError::Csv(format!("row {i}: bad id")))?,
        );
        let mut row = Vec::with_capacity(n_features);
        for j in 1..=n_features {
            row.push(
                rec.get(j)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| ExplainError::Csv(format!("row {i}: bad value")))?,
            );
        }
        rows.push(row);
    }
    Ok(ShapMatrix {
        values: Matrix::from_rows(&rows),
        base_value,
        sample_ids,
    })
}

/// Shapley kernel weight for a coalition of size `s` out of `m` features.
pub(crate) fn shapley_kernel_weight(m: usize, s: usize) -> f64 {
    debug_assert!(s >= 1 && s < m);
    (m as f64 - 1.0) / (binomial(m, s) * (s * (m - s)) as f64)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Weighted-average margin over background rows for each coalition mask:
/// features in the mask come from `x`, the rest from the background row.
pub(crate) fn coalition_values(
    model: &TrainedModel,
    x: &[f64],
    bg: &Background,
    masks: &[u64],
) -> Result<Vec<f64>, ExplainError> {
    let d = x.len();
    let n_bg = bg.n_rows();
    let mut out = Vec::with_capacity(masks.len());
    // chunk to bound the hybrid-row buffer
    let chunk = (1 << 13) / n_bg.max(1) + 1;
    let mut buf = Vec::with_capacity(chunk * n_bg * d);
    for group in masks.chunks(chunk) {
        buf.clear();
        for &mask in group {
            for b in 0..n_bg {
                let bg_row = bg.rows().row(b);
                for j in 0..d {
                    buf.push(if mask >> j & 1 == 1 { x[j] } else { bg_row[j] });
                }
            }
        }
        let margins = model.margin_batch(&buf, d)?;
        for (k, _) in group.iter().enumerate() {
            let slice = &margins[k * n_bg..(k + 1) * n_bg];
            out.push(slice.iter().zip(bg.weights()).map(|(m, w)| m * w).sum());
        }
    }
    Ok(out)
}
