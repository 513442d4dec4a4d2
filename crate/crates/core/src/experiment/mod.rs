//! Experiment orchestration: attacker scenarios, sweep configuration,
//! multi-seed attack and defense runs, and report persistence.
//!
//! Determinism contract: everything flows from `base_seed`. Per-trial
//! artifacts (data, split, clean model, attributions) derive from
//! `hash(base_seed, trial)`; cell-level randomness (poison sampling)
//! derives from `hash(base_seed, fraction, size, trial)`, so any single
//! cell can be re-run in isolation and reproduce its row.

mod run;

pub use run::{run_attack_experiment, run_defense_experiment, run_experiment, ExperimentOutput};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AttackError, SelectorConfig, Strategy, Trigger};
use crate::dataset::{DatasetError, SplitSpec, SynthConfig};
use crate::defend::{DefendError, DefenseKind, DEFAULT_REDUCED_FEATURES, DEFAULT_SPECTRAL_FRACTION};
use crate::explain::{ExplainError, ExplainerConfig};
use crate::models::{ModelError, ModelKind, TrainConfig};

#[derive(Error, Debug)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defend(#[from] DefendError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serde(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    Unrestricted,
    DataLimited,
    Transfer,
    BlackBox,
    Constrained,
}

/// Attacker capability profile; tags compose (e.g. constrained +
/// transfer + data_limited).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub tags: Vec<ScenarioTag>,
    #[serde(default)]
    pub surrogate_kind: Option<ModelKind>,
    /// Share of the training data the attacker sees (data_limited).
    #[serde(default)]
    pub data_fraction: Option<f64>,
    /// Path to a constraint-profile JSON file (constrained).
    #[serde(default)]
    pub constraint_profile: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            tags: vec![ScenarioTag::Unrestricted],
            surrogate_kind: None,
            data_fraction: None,
            constraint_profile: None,
        }
    }
}

pub const DEFAULT_DATA_FRACTION: f64 = 0.2;

impl Scenario {
    pub fn is(&self, tag: ScenarioTag) -> bool {
        self.tags.contains(&tag)
    }

    /// Effective attacker data share: 1.0 unless data_limited.
    pub fn effective_data_fraction(&self) -> f64 {
        if self.is(ScenarioTag::DataLimited) {
            self.data_fraction.unwrap_or(DEFAULT_DATA_FRACTION)
        } else {
            1.0
        }
    }

    pub fn label(&self) -> String {
        if self.tags.is_empty() {
            return "unrestricted".into();
        }
        self.tags
            .iter()
            .map(|t| match t {
                ScenarioTag::Unrestricted => "unrestricted",
                ScenarioTag::DataLimited => "data_limited",
                ScenarioTag::Transfer => "transfer",
                ScenarioTag::BlackBox => "black_box",
                ScenarioTag::Constrained => "constrained",
            })
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn validate(&self, victim_kind: ModelKind) -> Result<(), ExperimentError> {
        if self.is(ScenarioTag::Transfer) {
            match self.surrogate_kind {
                None => {
                    return Err(ExperimentError::Config(
                        "transfer scenario requires surrogate_kind".into(),
                    ))
                }
                Some(k) if k == victim_kind => {
                    return Err(ExperimentError::Config(
                        "transfer surrogate must differ from the victim kind".into(),
                    ))
                }
                _ => {}
            }
        }
        if self.is(ScenarioTag::DataLimited) {
            let f = self.effective_data_fraction();
            if !(f > 0.0 && f < 1.0) {
                return Err(ExperimentError::Config(format!(
                    "data_limited requires data_fraction in (0,1), got {f}"
                )));
            }
        }
        if self.is(ScenarioTag::Constrained) && self.constraint_profile.is_none() {
            return Err(ExperimentError::Config(
                "constrained scenario requires constraint_profile".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    Csv { data: PathBuf, spec: PathBuf },
}

/// Defense-stage parameters; defaults follow the mitigation setup
/// (32 reduced features, 15% spectral removal, 1% / 0.5% clustering
/// fractions, 100-tree isolation forest on 256-row subsamples).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseParams {
    pub reduced_features: usize,
    pub spectral_fraction: f64,
    pub min_cluster_fraction: f64,
    pub min_samples_fraction: f64,
    pub isolation_trees: usize,
    pub isolation_subsample: usize,
    /// Share of the training set treated as the defender's vetted clean
    /// data (sampled from rows the poison plan did not touch).
    pub trusted_fraction: f64,
}

impl Default for DefenseParams {
    fn default() -> Self {
        DefenseParams {
            reduced_features: DEFAULT_REDUCED_FEATURES,
            spectral_fraction: DEFAULT_SPECTRAL_FRACTION,
            min_cluster_fraction: 0.01,
            min_samples_fraction: 0.005,
            isolation_trees: 100,
            isolation_subsample: 256,
            trusted_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    pub victim: TrainConfig,
    #[serde(default)]
    pub scenario: Scenario,
    pub selector: SelectorConfig,
    pub strategy: Strategy,
    pub explainer: ExplainerConfig,
    pub poison_fractions: Vec<f64>,
    pub trigger_sizes: Vec<usize>,
    pub n_seeds: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub defenses: Vec<DefenseKind>,
    #[serde(default)]
    pub defense: DefenseParams,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_schema_version() -> u32 {
    1
}

fn default_threshold() -> f64 {
    0.5
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.schema_version != 1 {
            return Err(ExperimentError::Config(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.poison_fractions.is_empty() || self.trigger_sizes.is_empty() {
            return Err(ExperimentError::Config("sweep lists must be nonempty".into()));
        }
        if self.n_seeds == 0 {
            return Err(ExperimentError::Config("n_seeds must be >= 1".into()));
        }
        if self
            .poison_fractions
            .iter()
            .any(|&f| !(0.0..1.0).contains(&f))
        {
            return Err(ExperimentError::Config(
                "poison fractions must lie in [0,1)".into(),
            ));
        }
        self.victim
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.selector
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.scenario.validate(self.victim.kind)?;
        Ok(())
    }

    /// Unknown keys are hard errors: silent config typos corrupt sweeps.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let file = File::open(path).map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: ExperimentConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        write_json(path, self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub poison_fraction: f64,
    pub trigger_size: usize,
}

/// Metrics for one trial of one sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub trial: usize,
    pub cell_seed: u64,
    /// Clean victim on the clean test set.
    pub acc_f_x: f64,
    pub fp_clean: f64,
    /// Clean victim on the watermarked malware set.
    pub acc_f_xb: f64,
    /// Clean victim on the watermarked malware rows before watermarking;
    /// 1.0 by the selection contract.
    pub xb_prewatermark_clean_acc: f64,
    /// Backdoored victim on watermarked malware (the attacker minimizes
    /// this).
    pub acc_fb_xb: f64,
    /// Backdoored victim on the clean test set.
    pub acc_fb_x: f64,
    pub fp_b: f64,
    /// Clean-model accuracy on clean benign test rows minus accuracy on
    /// their watermarked counterparts (stealthiness).
    pub clean_on_backdoored_goodware_gap: f64,
    pub xb_size: usize,
    /// Malware rows dropped because the watermark violated constraints.
    pub xb_dropped: usize,
    pub n_poisoned: usize,
    pub trigger: Trigger,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MetricSummary { mean, std }
}

/// All attack metrics for one sweep cell: per-seed rows plus mean and
/// sample standard deviation per metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub cell: CellKey,
    pub scenario: String,
    pub strategy: Strategy,
    pub victim_kind: ModelKind,
    pub per_seed: Vec<SeedRow>,
    pub summary: BTreeMap<String, MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    pub fn mean(&self, metric: &str) -> f64 {
        self.summary.get(metric).map_or(f64::NAN, |m| m.mean)
    }
}

pub(crate) fn summarize_rows(rows: &[SeedRow]) -> BTreeMap<String, MetricSummary> {
    let mut out = BTreeMap::new();
    let mut put = |name: &str, f: fn(&SeedRow) -> f64| {
        let values: Vec<f64> = rows.iter().map(f).collect();
        out.insert(name.to_string(), summarize(&values));
    };
    put("acc_f_x", |r| r.acc_f_x);
    put("fp_clean", |r| r.fp_clean);
    put("acc_f_xb", |r| r.acc_f_xb);
    put("acc_fb_xb", |r| r.acc_fb_xb);
    put("acc_fb_x", |r| r.acc_fb_x);
    put("fp_b", |r| r.fp_b);
    put("clean_on_backdoored_goodware_gap", |r| {
        r.clean_on_backdoored_goodware_gap
    });
    out
}

/// One defense application against one attacked cell/trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MitigationRow {
    pub cell: CellKey,
    pub trial: usize,
    pub victim_kind: ModelKind,
    pub strategy: Strategy,
    pub defense: DefenseKind,
    pub attacked_acc_fb_xb: f64,
    pub new_acc_fb_xb: f64,
    pub poisons_removed: usize,
    pub poisons_total: usize,
    pub goodware_removed: usize,
    pub removed_total: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MitigationMatrix {
    pub rows: Vec<MitigationRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format '{other}'")),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| ExperimentError::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
    }
    let file = File::create(path).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| ExperimentError::Serde(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ReportDocument {
    schema_version: u32,
    reports: Vec<RunReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mitigation: Option<MitigationMatrix>,
}

/// Serializes run reports (and the mitigation matrix, when present).
/// JSON is lossless; CSV is plot-ready long format, one row per seed per
/// cell. Missing output directories are created.
pub fn emit_report(
    reports: &[RunReport],
    mitigation: Option<&MitigationMatrix>,
    format: ReportFormat,
    path: &Path,
) -> Result<(), ExperimentError> {
    match format {
        ReportFormat::Json => write_json(
            path,
            &ReportDocument {
                schema_version: 1,
                reports: reports.to_vec(),
                mitigation: mitigation.cloned(),
            },
        ),
        ReportFormat::Csv => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| ExperimentError::Io {
                        path: parent.display().to_string(),
                        source: e,
                    })?;
                }
            }
            let file = File::create(path).map_err(|e| ExperimentError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            let err = |e: csv::Error| ExperimentError::Serde(e.to_string());
            w.write_record([
                "scenario",
                "strategy",
                "victim",
                "poison_fraction",
                "trigger_size",
                "trial",
                "acc_f_x",
                "fp_clean",
                "acc_f_xb",
                "acc_fb_xb",
                "acc_fb_x",
                "fp_b",
                "clean_on_backdoored_goodware_gap",
                "xb_size",
                "xb_dropped",
                "n_poisoned",
                "error",
            ])
            .map_err(err)?;
            for report in reports {
                if let Some(e) = &report.error {
                    w.write_record([
                        report.scenario.as_str(),
                        strategy_str(report.strategy),
                        report.victim_kind.as_str(),
                        &report.cell.poison_fraction.to_string(),
                        &report.cell.trigger_size.to_string(),
                        "",
                        "",
                        "",
                        "",
                        "",
                        "",
                        "",
                        "",
                        "",
                        "",
                        "",
                        e,
                    ])
                    .map_err(err)?;
                }
                for row in &report.per_seed {
                    w.write_record([
                        report.scenario.as_str(),
                        strategy_str(report.strategy),
                        report.victim_kind.as_str(),
                        &report.cell.poison_fraction.to_string(),
                        &report.cell.trigger_size.to_string(),
                        &row.trial.to_string(),
                        &row.acc_f_x.to_string(),
                        &row.fp_clean.to_string(),
                        &row.acc_f_xb.to_string(),
                        &row.acc_fb_xb.to_string(),
                        &row.acc_fb_x.to_string(),
                        &row.fp_b.to_string(),
                        &row.clean_on_backdoored_goodware_gap.to_string(),
                        &row.xb_size.to_string(),
                        &row.xb_dropped.to_string(),
                        &row.n_poisoned.to_string(),
                        "",
                    ])
                    .map_err(err)?;
                }
            }
            w.flush().map_err(|e| ExperimentError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            Ok(())
        }
    }
}

/// Table-shaped mitigation CSV: strategy x defense with removal counts
/// and post-defense accuracy.
pub fn emit_mitigation_csv(matrix: &MitigationMatrix, path: &Path) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| ExperimentError::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
    }
    let file = File::create(path).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = |e: csv::Error| ExperimentError::Serde(e.to_string());
    w.write_record([
        "victim",
        "strategy",
        "poison_fraction",
        "trigger_size",
        "trial",
        "acc_fb_xb_after_attack",
        "mitigation",
        "new_acc_fb_xb_after_defense",
        "poisons_removed",
        "poisons_total",
        "goodware_removed",
        "removed_total",
    ])
    .map_err(err)?;
    for row in &matrix.rows {
        w.write_record([
            row.victim_kind.as_str(),
            strategy_str(row.strategy),
            &row.cell.poison_fraction.to_string(),
            &row.cell.trigger_size.to_string(),
            &row.trial.to_string(),
            &row.attacked_acc_fb_xb.to_string(),
            row.defense.as_str(),
            &row.new_acc_fb_xb.to_string(),
            &row.poisons_removed.to_string(),
            &row.poisons_total.to_string(),
            &row.goodware_removed.to_string(),
            &row.removed_total.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

fn strategy_str(s: Strategy) -> &'static str {
    match s {
        Strategy::Independent => "independent",
        Strategy::Combined => "combined",
    }
}

/// Loads a JSON report document back; used by the report subcommand and
/// round-trip checks.
pub fn load_report(path: &Path) -> Result<(Vec<RunReport>, Option<MitigationMatrix>), ExperimentError> {
    let file = File::open(path).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let doc: ReportDocument = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| ExperimentError::Serde(e.to_string()))?;
    Ok((doc.reports, doc.mitigation))
}
