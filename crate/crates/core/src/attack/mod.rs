//! Trigger construction and clean-label poison assembly.
//!
//! Feature selectors rank features by aggregate attribution; value
//! selectors pick watermark values from the benign-observed value space,
//! trading population density against attribution orientation. The
//! Independent strategy decouples the two choices for maximum leverage;
//! the Combined strategy greedily conditions each pick on the surviving
//! benign subspace so the trigger keeps real goodware support.

mod profile;

pub use profile::{ConstraintProfile, ProfileRule};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    benign_value_table, quantize, values_match, BenignValueTable, Constraint, Dataset,
    DatasetError, FeatureSpec, ValueDomain, ValueKey, BENIGN, MALWARE,
};
use crate::explain::ShapMatrix;
use crate::models::{ModelError, TrainedModel, DEFAULT_THRESHOLD};
use crate::rng::rng_from;
use rand::seq::SliceRandom;

#[derive(Error, Debug)]
pub enum AttackError {
    #[error("attribution matrix is empty")]
    EmptyShapMatrix,
    #[error("cannot select {k} features from {available}")]
    KTooLarge { k: usize, available: usize },
    #[error("benign value table empty for feature {feature}")]
    EmptyValueTable { feature: usize },
    #[error("only {available} modifiable features under the profile, need {needed}")]
    NotEnoughModifiable { needed: usize, available: usize },
    #[error("working set of benign rows is empty")]
    EmptyWorkingSet,
    #[error("trigger touches non-modifiable feature '{name}'")]
    NonModifiableFeature { name: String },
    #[error("need {needed} watermarkable benign rows, only {available} available")]
    InsufficientPoisonRows { needed: usize, available: usize },
    #[error("no test malware is correctly classified and watermarkable")]
    EmptyWatermarkedSet,
    #[error("profile references unknown feature '{name}'")]
    ProfileUnknownFeature { name: String },
    #[error("shap rows ({shap}) misaligned with dataset rows ({rows})")]
    ShapAlignment { shap: usize, rows: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    Signed,
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    MostGoodwareOriented,
    LargestMagnitude,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSelector {
    LargeShapGoodware,
    LargeAbsShap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSelector {
    MinPopulation,
    CountShap,
    CountAbsShap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Independent,
    Combined,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "independent" => Ok(Strategy::Independent),
            "combined" => Ok(Strategy::Combined),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorConfig {
    pub feature_selector: FeatureSelector,
    pub value_selector: ValueSelector,
    #[serde(default = "default_coef")]
    pub alpha: f64,
    #[serde(default = "default_coef")]
    pub beta: f64,
    pub trigger_size: usize,
}

fn default_coef() -> f64 {
    1.0
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(AttackError::InvalidConfig("alpha/beta must be >= 0".into()));
        }
        if self.trigger_size == 0 {
            return Err(AttackError::InvalidConfig("trigger_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerEntry {
    pub feature_index: usize,
    pub feature_name: String,
    pub value: f64,
}

/// Ordered feature-to-value watermark plus provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub entries: Vec<TriggerEntry>,
    pub strategy: Strategy,
    pub constraint_profile: String,
    /// Set when the greedy loop stopped before reaching the requested size.
    #[serde(default)]
    pub early_stop: bool,
    /// Surviving benign working-set size after each greedy iteration
    /// (Combined strategy only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub support_history: Vec<usize>,
}

impl Trigger {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    /// Invariant check: no duplicate features, all modifiable, and every
    /// benign-only value present in the benign value table.
    pub fn validate(
        &self,
        specs: &[FeatureSpec],
        table: &BenignValueTable,
    ) -> Result<(), AttackError> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.feature_index) {
                return Err(AttackError::InvalidConfig(format!(
                    "duplicate trigger feature {}",
                    e.feature_index
                )));
            }
            let spec = &specs[e.feature_index];
            if !spec.modifiable {
                return Err(AttackError::NonModifiableFeature {
                    name: spec.name.clone(),
                });
            }
            if spec.value_domain == ValueDomain::ObservedBenignOnly
                && !table.contains(e.feature_index, spec.kind, e.value)
            {
                return Err(AttackError::InvalidConfig(format!(
                    "trigger value {} for '{}' not observed in benign rows",
                    e.value, spec.name
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), AttackError> {
        let file = File::create(path).map_err(|e| AttackError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut w = BufWriter::new(file);
        let doc = PersistedTrigger {
            schema_version: 1,
            trigger: self.clone(),
        };
        serde_json::to_writer_pretty(&mut w, &doc)
            .map_err(|e| AttackError::InvalidConfig(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| AttackError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Trigger, AttackError> {
        let file = File::open(path).map_err(|e| AttackError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let doc: PersistedTrigger = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| AttackError::InvalidConfig(e.to_string()))?;
        Ok(doc.trigger)
    }
}

#[derive(Serialize, Deserialize)]
struct PersistedTrigger {
    schema_version: u32,
    trigger: Trigger,
}

/// Which benign training rows get watermarked, and with what.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonPlan {
    pub poison_fraction: f64,
    pub selected_benign_ids: Vec<u64>,
    pub trigger: Trigger,
    pub seed: u64,
}

/// Column sums of the attribution matrix: signed keeps class orientation,
/// absolute measures overall importance.
pub fn feature_importance(shap: &ShapMatrix, mode: ImportanceMode) -> Result<Vec<f64>, AttackError> {
    if shap.n_samples() == 0 {
        return Err(AttackError::EmptyShapMatrix);
    }
    let mut sums = vec![0.0; shap.n_features()];
    for row in shap.values.rows() {
        for (acc, &v) in sums.iter_mut().zip(row) {
            *acc += match mode {
                ImportanceMode::Signed => v,
                ImportanceMode::Absolute => v.abs(),
            };
        }
    }
    Ok(sums)
}

/// Top-k feature indices; ties break toward the lower index.
pub fn select_features(
    importance: &[f64],
    k: usize,
    mode: SelectionMode,
) -> Result<Vec<usize>, AttackError> {
    let all: Vec<usize> = (0..importance.len()).collect();
    select_features_among(importance, &all, k, mode)
}

/// Like [`select_features`] but restricted to candidate indices.
pub fn select_features_among(
    importance: &[f64],
    candidates: &[usize],
    k: usize,
    mode: SelectionMode,
) -> Result<Vec<usize>, AttackError> {
    if k > candidates.len() {
        return Err(AttackError::KTooLarge {
            k,
            available: candidates.len(),
        });
    }
    let mut order: Vec<usize> = candidates.to_vec();
    match mode {
        SelectionMode::MostGoodwareOriented => {
            order.sort_by(|&a, &b| importance[a].total_cmp(&importance[b]).then(a.cmp(&b)));
        }
        SelectionMode::LargestMagnitude => {
            order.sort_by(|&a, &b| {
                importance[b]
                    .abs()
                    .total_cmp(&importance[a].abs())
                    .then(a.cmp(&b))
            });
        }
    }
    order.truncate(k);
    Ok(order)
}

/// The least frequent benign value; ties break toward the smaller value.
pub fn select_value_min_population(
    feature: usize,
    table: &BenignValueTable,
) -> Result<f64, AttackError> {
    let entries = table.feature(feature);
    if entries.is_empty() {
        return Err(AttackError::EmptyValueTable { feature });
    }
    let mut best: Option<(usize, f64)> = None;
    for (key, &count) in entries {
        match best {
            None => best = Some((count, key.0)),
            Some((c, _)) if count < c => best = Some((count, key.0)),
            _ => {}
        }
    }
    Ok(best.unwrap().1)
}

/// Per-(feature,value) additions to the attribution-sum term, steering
/// selection away from values infeasible in the problem space.
#[derive(Clone, Debug, Default)]
pub struct InflationPenalties {
    map: BTreeMap<(usize, ValueKey), f64>,
}

impl InflationPenalties {
    pub fn new() -> Self {
        Self::default()
    }

    /// Default magnitude: ten times the largest absolute attribution, large
    /// enough to dominate any genuine sum.
    pub fn suggested_magnitude(shap: &ShapMatrix) -> f64 {
        let max_abs = shap
            .values
            .data()
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        10.0 * max_abs.max(1.0)
    }

    pub fn set(&mut self, feature: usize, quantized_value: f64, penalty: f64) {
        self.map.insert((feature, ValueKey(quantized_value)), penalty);
    }

    fn get(&self, feature: usize, key: ValueKey) -> f64 {
        self.map.get(&(feature, key)).copied().unwrap_or(0.0)
    }
}

/// Scores every candidate value of a feature:
/// `alpha * (1 / c_v) + beta * (sum of attributions over rows carrying v)`,
/// with `|.|` applied per-attribution in absolute mode. Candidates are the
/// keys of the benign value table; the attribution sum ranges over all
/// rows of `ds`.
#[allow(clippy::too_many_arguments)]
fn count_shap_scores(
    feature: usize,
    table: &BenignValueTable,
    shap: &ShapMatrix,
    ds: &Dataset,
    alpha: f64,
    beta: f64,
    mode: ImportanceMode,
    inflation: Option<&InflationPenalties>,
) -> Result<Vec<(f64, f64)>, AttackError> {
    let entries = table.feature(feature);
    if entries.is_empty() {
        return Err(AttackError::EmptyValueTable { feature });
    }
    if shap.n_samples() != ds.n_rows() {
        return Err(AttackError::ShapAlignment {
            shap: shap.n_samples(),
            rows: ds.n_rows(),
        });
    }
    let kind = ds.specs()[feature].kind;
    let mut sums: BTreeMap<ValueKey, f64> = BTreeMap::new();
    for i in 0..ds.n_rows() {
        let key = ValueKey(quantize(kind, ds.row(i)[feature]));
        let s = shap.values.get(i, feature);
        let contribution = match mode {
            ImportanceMode::Signed => s,
            ImportanceMode::Absolute => s.abs(),
        };
        *sums.entry(key).or_insert(0.0) += contribution;
    }
    Ok(entries
        .iter()
        .map(|(key, &count)| {
            let mut shap_term = sums.get(key).copied().unwrap_or(0.0);
            if let Some(inf) = inflation {
                shap_term += inf.get(feature, *key);
            }
            let score = alpha * (1.0 / count as f64) + beta * shap_term;
            (key.0, score)
        })
        .collect())
}

/// Argmin of the count/attribution trade-off; ties toward smaller value.
pub fn select_value_count_shap(
    feature: usize,
    table: &BenignValueTable,
    shap: &ShapMatrix,
    ds: &Dataset,
    alpha: f64,
    beta: f64,
    mode: ImportanceMode,
) -> Result<f64, AttackError> {
    let scores = count_shap_scores(feature, table, shap, ds, alpha, beta, mode, None)?;
    Ok(argmin_value(&scores))
}

fn argmin_value(scores: &[(f64, f64)]) -> f64 {
    // candidates arrive in ascending value order; strict < keeps the smaller
    let mut best = scores[0];
    for &(v, s) in &scores[1..] {
        if s < best.1 {
            best = (v, s);
        }
    }
    best.0
}

/// Independent strategy: rank features globally, then pick each value in
/// isolation with the configured selector.
pub fn build_trigger_independent(
    shap: &ShapMatrix,
    ds: &Dataset,
    cfg: &SelectorConfig,
    profile: &ConstraintProfile,
) -> Result<Trigger, AttackError> {
    cfg.validate()?;
    if shap.n_samples() != ds.n_rows() {
        return Err(AttackError::ShapAlignment {
            shap: shap.n_samples(),
            rows: ds.n_rows(),
        });
    }
    let specs = profile.effective_specs(ds.specs())?;
    let modifiable: Vec<usize> = specs
        .iter()
        .filter(|s| s.modifiable)
        .map(|s| s.index)
        .collect();
    if modifiable.len() < cfg.trigger_size {
        return Err(AttackError::NotEnoughModifiable {
            needed: cfg.trigger_size,
            available: modifiable.len(),
        });
    }
    let (imode, smode) = match cfg.feature_selector {
        FeatureSelector::LargeShapGoodware => {
            (ImportanceMode::Signed, SelectionMode::MostGoodwareOriented)
        }
        FeatureSelector::LargeAbsShap => (ImportanceMode::Absolute, SelectionMode::LargestMagnitude),
    };
    let importance = feature_importance(shap, imode)?;
    let chosen = select_features_among(&importance, &modifiable, cfg.trigger_size, smode)?;

    let table = benign_value_table(ds)?;
    let mut entries = Vec::with_capacity(chosen.len());
    for f in chosen {
        let value = match cfg.value_selector {
            ValueSelector::MinPopulation => select_value_min_population(f, &table)?,
            ValueSelector::CountShap => select_value_count_shap(
                f,
                &table,
                shap,
                ds,
                cfg.alpha,
                cfg.beta,
                ImportanceMode::Signed,
            )?,
            ValueSelector::CountAbsShap => select_value_count_shap(
                f,
                &table,
                shap,
                ds,
                cfg.alpha,
                cfg.beta,
                ImportanceMode::Absolute,
            )?,
        };
        entries.push(TriggerEntry {
            feature_index: f,
            feature_name: specs[f].name.clone(),
            value,
        });
    }
    let trigger = Trigger {
        entries,
        strategy: Strategy::Independent,
        constraint_profile: profile.name().to_string(),
        early_stop: false,
        support_history: Vec::new(),
    };
    trigger.validate(&specs, &table)?;
    Ok(trigger)
}

/// Greedy combined selection: N times, pick the most goodware-oriented
/// remaining feature by signed column sum, pick its value by the signed
/// count/attribution trade-off over the surviving rows, then keep only
/// rows carrying the chosen value. The working set is the benign portion
/// of the training data, so the finished trigger has real goodware
/// support unless the loop stopped early.
pub fn build_trigger_combined(
    shap: &ShapMatrix,
    ds: &Dataset,
    n: usize,
    profile: &ConstraintProfile,
    inflation: Option<&InflationPenalties>,
) -> Result<Trigger, AttackError> {
    if n == 0 {
        return Err(AttackError::InvalidConfig("trigger size must be >= 1".into()));
    }
    if shap.n_samples() != ds.n_rows() {
        return Err(AttackError::ShapAlignment {
            shap: shap.n_samples(),
            rows: ds.n_rows(),
        });
    }
    let specs = profile.effective_specs(ds.specs())?;
    let benign = ds.benign_indices();
    if benign.is_empty() {
        return Err(AttackError::EmptyWorkingSet);
    }
    let mut working = ds.select_rows(&benign);
    let mut working_shap = shap.select_rows(&benign);
    let mut remaining: Vec<usize> = specs
        .iter()
        .filter(|s| s.modifiable)
        .map(|s| s.index)
        .collect();
    if remaining.is_empty() {
        return Err(AttackError::NotEnoughModifiable {
            needed: 1,
            available: 0,
        });
    }

    let mut entries = Vec::new();
    let mut support_history = Vec::new();
    let mut early_stop = false;
    for _ in 0..n {
        if remaining.is_empty() || working.n_rows() == 0 {
            early_stop = true;
            break;
        }
        let importance = feature_importance(&working_shap, ImportanceMode::Signed)?;
        let f = select_features_among(
            &importance,
            &remaining,
            1,
            SelectionMode::MostGoodwareOriented,
        )?[0];
        let table = benign_value_table(&working)?;
        let scores = count_shap_scores(
            f,
            &table,
            &working_shap,
            &working,
            1.0,
            1.0,
            ImportanceMode::Signed,
            inflation,
        )?;
        let v = argmin_value(&scores);
        entries.push(TriggerEntry {
            feature_index: f,
            feature_name: specs[f].name.clone(),
            value: v,
        });
        remaining.retain(|&r| r != f);

        let kind = specs[f].kind;
        let mask: Vec<usize> = (0..working.n_rows())
            .filter(|&i| values_match(kind, working.row(i)[f], v))
            .collect();
        if mask.is_empty() {
            // cannot happen while candidates come from the working set;
            // guard so a bad inflation table degrades to an early stop
            early_stop = true;
            break;
        }
        working = working.select_rows(&mask);
        working_shap = working_shap.select_rows(&mask);
        support_history.push(working.n_rows());
    }
    if entries.len() < n {
        early_stop = true;
    }
    let trigger = Trigger {
        entries,
        strategy: Strategy::Combined,
        constraint_profile: profile.name().to_string(),
        early_stop,
        support_history,
    };
    trigger.validate(&specs, &benign_value_table(ds)?)?;
    Ok(trigger)
}

/// Applies the watermark to one vector. Fails the whole application
/// (returning the input unchanged) when any additive-only feature would
/// have to decrease; touching a non-modifiable feature is a configuration
/// error instead.
pub fn apply_trigger(
    x: &[f64],
    trigger: &Trigger,
    specs: &[FeatureSpec],
) -> Result<(Vec<f64>, bool), AttackError> {
    for e in &trigger.entries {
        let spec = &specs[e.feature_index];
        if !spec.modifiable {
            return Err(AttackError::NonModifiableFeature {
                name: spec.name.clone(),
            });
        }
    }
    for e in &trigger.entries {
        if specs[e.feature_index].constraint == Constraint::AdditiveOnly
            && e.value < x[e.feature_index]
        {
            return Ok((x.to_vec(), false));
        }
    }
    let mut out = x.to_vec();
    for e in &trigger.entries {
        out[e.feature_index] = e.value;
    }
    Ok((out, true))
}

/// Watermarks a seeded uniform sample of benign training rows in place,
/// keeping their labels (clean-label poisoning). Only rows where the
/// watermark applies are eligible.
pub fn build_poison_set(
    train: &Dataset,
    trigger: &Trigger,
    specs: &[FeatureSpec],
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, PoisonPlan), AttackError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(AttackError::InvalidConfig(format!(
            "poison_fraction {fraction} outside (0,1)"
        )));
    }
    let needed = (fraction * train.n_rows() as f64).round() as usize;
    if needed == 0 {
        return Err(AttackError::InsufficientPoisonRows {
            needed: 1,
            available: 0,
        });
    }
    let mut pool = Vec::new();
    let mut watermarked = Vec::new();
    for i in 0..train.n_rows() {
        if train.label(i) != BENIGN {
            continue;
        }
        let (row, applied) = apply_trigger(train.row(i), trigger, specs)?;
        if applied {
            pool.push(i);
            watermarked.push(row);
        }
    }
    if pool.len() < needed {
        return Err(AttackError::InsufficientPoisonRows {
            needed,
            available: pool.len(),
        });
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng_from(seed));
    order.truncate(needed);
    order.sort_unstable();

    let mut poisoned = train.clone();
    let mut ids = Vec::with_capacity(needed);
    for &k in &order {
        poisoned.replace_row(pool[k], &watermarked[k]);
        ids.push(train.id(pool[k]));
    }
    let plan = PoisonPlan {
        poison_fraction: fraction,
        selected_benign_ids: ids,
        trigger: trigger.clone(),
        seed,
    };
    Ok((poisoned, plan))
}

/// The watermarked-malware evaluation set: test malware the clean model
/// classifies correctly, with the trigger applied. Rows whose watermark
/// fails the constraints are dropped; the caller can count them from the
/// size difference.
pub fn watermark_test_malware(
    test: &Dataset,
    model_clean: &TrainedModel,
    trigger: &Trigger,
    specs: &[FeatureSpec],
) -> Result<Dataset, AttackError> {
    let mut rows = Vec::new();
    let mut keep = Vec::new();
    for i in 0..test.n_rows() {
        if test.label(i) != MALWARE {
            continue;
        }
        if model_clean.predict_label(test.row(i), DEFAULT_THRESHOLD)? != MALWARE {
            continue;
        }
        let (row, applied) = apply_trigger(test.row(i), trigger, specs)?;
        if applied {
            rows.push(row);
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(AttackError::EmptyWatermarkedSet);
    }
    let mut out = test.select_rows(&keep);
    for (pos, row) in rows.iter().enumerate() {
        out.replace_row(pos, row);
    }
    Ok(out)
}
