//! The sweep engine: builds per-trial artifacts (data, split, clean
//! victim, attacker-view attributions) once, then runs every
//! (poison_fraction, trigger_size, trial) cell — and optionally the
//! defense stage — as independent parallel jobs merged in deterministic
//! order.

use rayon::prelude::*;

use super::*;
use crate::attack::{
    build_poison_set, build_trigger_combined, build_trigger_independent, watermark_test_malware,
    apply_trigger, ConstraintProfile, PoisonPlan, Strategy, Trigger,
};
use crate::dataset::{generate_synthetic, load_csv, split, Dataset, FeatureSpec, BENIGN};
use crate::defend::{
    density_cluster_filter, isolation_forest_filter, reduce_space, retrain_after_filter,
    spectral_filter, DefenseKind, FilterReport,
};
use crate::explain::{explain_dataset, Background, ExplainMethod};
use crate::models::{evaluate, train, TrainConfig, TrainedModel};
use crate::rng::derive_seed;

const L_TRIAL: u64 = 0x7121;
const L_DATA: u64 = 0xda7a;
const L_SPLIT: u64 = 0x5713;
const L_VIEW: u64 = 0x71e1;
const L_SURROGATE: u64 = 0x5a00;
const L_EXPLAIN: u64 = 0xe791;
const L_BG: u64 = 0xb6;
const L_CELL: u64 = 0xce11;
const L_TRUSTED: u64 = 0x7275;
const L_DEF_MODEL: u64 = 0xdef0;
const L_DEF_EXPLAIN: u64 = 0xdef1;
const L_DEF_BG: u64 = 0xdef2;
const L_DEF_FILTER: u64 = 0xdef3;

pub struct ExperimentOutput {
    pub reports: Vec<RunReport>,
    pub mitigation: Option<MitigationMatrix>,
    pub had_failures: bool,
}

struct TrialContext {
    trial: usize,
    trial_seed: u64,
    train: Dataset,
    test: Dataset,
    clean_model: TrainedModel,
    /// Effective per-feature rules under the scenario profile.
    specs: Vec<FeatureSpec>,
    /// One trigger per configured size, built from the view.
    triggers: Vec<Result<Trigger, String>>,
}

fn derive_cell_seed(base: u64, fraction: f64, size: usize, trial: usize) -> u64 {
    derive_seed(base, &[L_CELL, fraction.to_bits(), size as u64, trial as u64])
}

fn build_trial(
    cfg: &ExperimentConfig,
    profile: &ConstraintProfile,
    source_csv: Option<&Dataset>,
    trial: usize,
) -> Result<TrialContext, ExperimentError> {
    let trial_seed = derive_seed(cfg.base_seed, &[L_TRIAL, trial as u64]);
    let full = match (&cfg.dataset, source_csv) {
        (DatasetSource::Synthetic(synth), _) => {
            let mut s = synth.clone();
            s.seed = derive_seed(trial_seed, &[L_DATA, synth.seed]);
            generate_synthetic(&s)?
        }
        (DatasetSource::Csv { .. }, Some(ds)) => ds.clone(),
        (DatasetSource::Csv { data, spec }, None) => load_csv(data, spec)?,
    };
    let split_spec = SplitSpec {
        seed: derive_seed(trial_seed, &[L_SPLIT, cfg.split.seed]),
        ..cfg.split
    };
    let (train_ds, test_ds) = split(&full, &split_spec)?;

    let victim_cfg = TrainConfig {
        seed: trial_seed,
        ..cfg.victim.clone()
    };
    let clean_model = train(&train_ds, &victim_cfg)?;

    let data_fraction = cfg.scenario.effective_data_fraction();
    let view = if data_fraction < 1.0 {
        train_ds.stratified_subsample(data_fraction, derive_seed(trial_seed, &[L_VIEW]))?
    } else {
        train_ds.clone()
    };

    // The attacker explains their own model: the victim when they have
    // it, a surrogate or same-architecture proxy otherwise. Trigger
    // construction only ever sees this model's attributions.
    let attack_model = if cfg.scenario.is(ScenarioTag::Transfer) {
        let surrogate_cfg = TrainConfig {
            kind: cfg.scenario.surrogate_kind.expect("validated"),
            seed: derive_seed(trial_seed, &[L_SURROGATE]),
            ..cfg.victim.clone()
        };
        train(&view, &surrogate_cfg)?
    } else if data_fraction < 1.0 {
        let proxy_cfg = TrainConfig {
            seed: derive_seed(trial_seed, &[L_SURROGATE]),
            ..cfg.victim.clone()
        };
        train(&view, &proxy_cfg)?
    } else {
        clean_model.clone()
    };

    let mut explainer = cfg.explainer;
    if cfg.scenario.is(ScenarioTag::BlackBox) {
        explainer.method = ExplainMethod::Kernel;
    }
    explainer.seed = derive_seed(trial_seed, &[L_EXPLAIN, cfg.explainer.seed]);
    let bg = Background::benign_sample(
        &view,
        explainer.background_size,
        derive_seed(trial_seed, &[L_BG]),
    )?;
    let shap = explain_dataset(&attack_model, &view, &bg, &explainer)?;

    let specs = profile.effective_specs(train_ds.specs())?;
    let triggers = cfg
        .trigger_sizes
        .iter()
        .map(|&size| {
            let built = match cfg.strategy {
                Strategy::Independent => {
                    let sel = crate::attack::SelectorConfig {
                        trigger_size: size,
                        ..cfg.selector.clone()
                    };
                    build_trigger_independent(&shap, &view, &sel, profile)
                }
                Strategy::Combined => build_trigger_combined(&shap, &view, size, profile, None),
            };
            built.map_err(|e| e.to_string())
        })
        .collect();

    Ok(TrialContext {
        trial,
        trial_seed,
        train: train_ds,
        test: test_ds,
        clean_model,
        specs,
        triggers,
    })
}

/// Clean-model accuracy gap on benign test rows vs their watermarked
/// counterparts, over rows where the watermark applies.
fn stealth_gap(
    clean: &TrainedModel,
    test: &Dataset,
    trigger: &Trigger,
    specs: &[FeatureSpec],
    threshold: f64,
) -> Result<f64, ExperimentError> {
    let mut n = 0usize;
    let mut correct_clean = 0usize;
    let mut correct_wm = 0usize;
    for i in 0..test.n_rows() {
        if test.label(i) != BENIGN {
            continue;
        }
        let (wm, applied) = apply_trigger(test.row(i), trigger, specs)?;
        if !applied {
            continue;
        }
        n += 1;
        if clean.predict_label(test.row(i), threshold)? == BENIGN {
            correct_clean += 1;
        }
        if clean.predict_label(&wm, threshold)? == BENIGN {
            correct_wm += 1;
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok((correct_clean as f64 - correct_wm as f64) / n as f64)
}

struct CellOutcome {
    row: SeedRow,
    mitigation: Vec<MitigationRow>,
}

fn run_cell(
    cfg: &ExperimentConfig,
    ctx: &TrialContext,
    size_idx: usize,
    fraction: f64,
) -> Result<CellOutcome, ExperimentError> {
    let size = cfg.trigger_sizes[size_idx];
    let trigger = ctx.triggers[size_idx]
        .as_ref()
        .map_err(|e| ExperimentError::Config(format!("trigger build failed: {e}")))?;
    let cell_seed = derive_cell_seed(cfg.base_seed, fraction, size, ctx.trial);
    let threshold = cfg.threshold;

    let (poisoned, plan) = if fraction > 0.0 {
        build_poison_set(&ctx.train, trigger, &ctx.specs, fraction, cell_seed)?
    } else {
        (
            ctx.train.clone(),
            PoisonPlan {
                poison_fraction: 0.0,
                selected_benign_ids: Vec::new(),
                trigger: trigger.clone(),
                seed: cell_seed,
            },
        )
    };
    let victim_cfg = TrainConfig {
        seed: ctx.trial_seed,
        ..cfg.victim.clone()
    };
    let backdoored = train(&poisoned, &victim_cfg)?;
    let xb = watermark_test_malware(&ctx.test, &ctx.clean_model, trigger, &ctx.specs)?;

    let eval_clean = evaluate(&ctx.clean_model, &ctx.test, threshold)?;
    let eval_fb = evaluate(&backdoored, &ctx.test, threshold)?;
    let acc_fb_xb = evaluate(&backdoored, &xb, threshold)?.accuracy;
    let acc_f_xb = evaluate(&ctx.clean_model, &xb, threshold)?.accuracy;

    // selection contract: these rows were correctly classified pre-watermark
    let mut pre_ok = 0usize;
    for i in 0..xb.n_rows() {
        let orig = ctx
            .test
            .row_index_of_id(xb.id(i))
            .expect("xb ids come from the test set");
        if ctx.clean_model.predict_label(ctx.test.row(orig), threshold)? == 1 {
            pre_ok += 1;
        }
    }
    let correctly_classified_malware = ctx
        .test
        .malware_indices()
        .into_iter()
        .filter(|&i| {
            ctx.clean_model
                .predict_label(ctx.test.row(i), threshold)
                .map(|l| l == 1)
                .unwrap_or(false)
        })
        .count();

    let row = SeedRow {
        trial: ctx.trial,
        cell_seed,
        acc_f_x: eval_clean.accuracy,
        fp_clean: eval_clean.fp_rate,
        acc_f_xb,
        xb_prewatermark_clean_acc: pre_ok as f64 / xb.n_rows() as f64,
        acc_fb_xb,
        acc_fb_x: eval_fb.accuracy,
        fp_b: eval_fb.fp_rate,
        clean_on_backdoored_goodware_gap: stealth_gap(
            &ctx.clean_model,
            &ctx.test,
            trigger,
            &ctx.specs,
            threshold,
        )?,
        xb_size: xb.n_rows(),
        xb_dropped: correctly_classified_malware - xb.n_rows(),
        n_poisoned: plan.selected_benign_ids.len(),
        trigger: trigger.clone(),
    };

    let mut mitigation = Vec::new();
    if !cfg.defenses.is_empty() {
        mitigation = run_defenses(cfg, ctx, &poisoned, &plan, &xb, acc_fb_xb, fraction, size)?;
    }
    Ok(CellOutcome { row, mitigation })
}

#[allow(clippy::too_many_arguments)]
fn run_defenses(
    cfg: &ExperimentConfig,
    ctx: &TrialContext,
    poisoned: &Dataset,
    plan: &PoisonPlan,
    xb: &Dataset,
    attacked_acc: f64,
    fraction: f64,
    size: usize,
) -> Result<Vec<MitigationRow>, ExperimentError> {
    let params = &cfg.defense;
    let cell_seed = derive_cell_seed(cfg.base_seed, fraction, size, ctx.trial);

    // The defender's vetted clean subset: sampled from training rows the
    // poison plan did not touch (threat model: companies hold trusted
    // internal data alongside crowd-sourced feeds).
    let poison_ids: std::collections::HashSet<&u64> = plan.selected_benign_ids.iter().collect();
    let untouched: Vec<usize> = (0..poisoned.n_rows())
        .filter(|&i| !poison_ids.contains(&poisoned.id(i)))
        .collect();
    let pool = poisoned.select_rows(&untouched);
    let want = (params.trusted_fraction * poisoned.n_rows() as f64).round() as usize;
    let trusted = pool.stratified_subsample(
        (want as f64 / pool.n_rows() as f64).min(1.0),
        derive_seed(ctx.trial_seed, &[L_TRUSTED]),
    )?;

    let defender_cfg = TrainConfig {
        seed: derive_seed(ctx.trial_seed, &[L_DEF_MODEL]),
        ..cfg.victim.clone()
    };
    let defender_model = train(&trusted, &defender_cfg)?;
    let mut explainer = cfg.explainer;
    explainer.seed = derive_seed(ctx.trial_seed, &[L_DEF_EXPLAIN]);
    let bg = Background::benign_sample(
        &trusted,
        explainer.background_size,
        derive_seed(ctx.trial_seed, &[L_DEF_BG]),
    )?;
    let clean_shap = explain_dataset(&defender_model, &trusted, &bg, &explainer)?;

    let benign_rows = poisoned.select_rows(&poisoned.benign_indices());
    let k = params.reduced_features.min(poisoned.n_features());
    let rs = reduce_space(&benign_rows, &clean_shap, k)?;

    let victim_cfg = TrainConfig {
        seed: ctx.trial_seed,
        ..cfg.victim.clone()
    };
    let mut rows = Vec::new();
    for (d_idx, &defense) in cfg.defenses.iter().enumerate() {
        let filter_seed = derive_seed(cell_seed, &[L_DEF_FILTER, d_idx as u64]);
        let mut report: FilterReport = match defense {
            DefenseKind::SpectralSignature => spectral_filter(&rs, params.spectral_fraction)?,
            DefenseKind::DensityClustering => density_cluster_filter(
                &rs,
                params.min_cluster_fraction,
                params.min_samples_fraction,
                filter_seed,
            )?,
            DefenseKind::IsolationForest => isolation_forest_filter(
                &rs,
                params.isolation_trees,
                params.isolation_subsample,
                filter_seed,
            )?,
        };
        report.score_against(&plan.selected_benign_ids);
        let (_, new_acc) = retrain_after_filter(poisoned, &report, &victim_cfg, xb)?;
        rows.push(MitigationRow {
            cell: CellKey {
                poison_fraction: fraction,
                trigger_size: size,
            },
            trial: ctx.trial,
            victim_kind: cfg.victim.kind,
            strategy: cfg.strategy,
            defense,
            attacked_acc_fb_xb: attacked_acc,
            new_acc_fb_xb: new_acc,
            poisons_removed: report.poisons_removed,
            poisons_total: plan.selected_benign_ids.len(),
            goodware_removed: report.goodware_removed,
            removed_total: report.removed_ids.len(),
        });
    }
    Ok(rows)
}

/// Runs the full sweep. Failed cells are recorded on their report rather
/// than aborting the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let profile = match &cfg.scenario.constraint_profile {
        Some(path) => ConstraintProfile::load(path)?,
        None => ConstraintProfile::DatasetDefaults,
    };
    let source_csv = match &cfg.dataset {
        DatasetSource::Csv { data, spec } => Some(load_csv(data, spec)?),
        DatasetSource::Synthetic(_) => None,
    };

    let contexts: Vec<Result<TrialContext, String>> = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|t| build_trial(cfg, &profile, source_csv.as_ref(), t).map_err(|e| e.to_string()))
        .collect();

    // every (size, fraction, trial) is an independent job
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.trigger_sizes.len())
        .flat_map(|si| {
            (0..cfg.poison_fractions.len())
                .flat_map(move |fi| (0..cfg.n_seeds).map(move |t| (si, fi, t)))
        })
        .collect();
    let outcomes: Vec<Result<CellOutcome, String>> = jobs
        .par_iter()
        .map(|&(si, fi, t)| match &contexts[t] {
            Err(e) => Err(format!("trial {t}: {e}")),
            Ok(ctx) => {
                run_cell(cfg, ctx, si, cfg.poison_fractions[fi]).map_err(|e| e.to_string())
            }
        })
        .collect();

    let mut reports = Vec::new();
    let mut mitigation_rows = Vec::new();
    let mut had_failures = false;
    for (si, &size) in cfg.trigger_sizes.iter().enumerate() {
        for (fi, &fraction) in cfg.poison_fractions.iter().enumerate() {
            let mut per_seed = Vec::new();
            let mut errors: Vec<String> = Vec::new();
            for t in 0..cfg.n_seeds {
                let job_idx = si * cfg.poison_fractions.len() * cfg.n_seeds + fi * cfg.n_seeds + t;
                match &outcomes[job_idx] {
                    Ok(outcome) => {
                        per_seed.push(outcome.row.clone());
                        mitigation_rows.extend(outcome.mitigation.iter().cloned());
                    }
                    Err(e) => {
                        if !errors.contains(e) {
                            errors.push(e.clone());
                        }
                    }
                }
            }
            had_failures |= !errors.is_empty();
            let summary = summarize_rows(&per_seed);
            reports.push(RunReport {
                cell: CellKey {
                    poison_fraction: fraction,
                    trigger_size: size,
                },
                scenario: cfg.scenario.label(),
                strategy: cfg.strategy,
                victim_kind: cfg.victim.kind,
                per_seed,
                summary,
                error: if errors.is_empty() {
                    None
                } else {
                    Some(errors.join("; "))
                },
            });
        }
    }
    let mitigation = if cfg.defenses.is_empty() {
        None
    } else {
        Some(MitigationMatrix {
            rows: mitigation_rows,
        })
    };
    Ok(ExperimentOutput {
        reports,
        mitigation,
        had_failures,
    })
}

/// Attack-only sweep: any configured defenses are ignored.
pub fn run_attack_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunReport>, ExperimentError> {
    let mut cfg = cfg.clone();
    cfg.defenses.clear();
    Ok(run_experiment(&cfg)?.reports)
}

/// Defense sweep: runs the attack cells, then applies each defense to
/// every attacked cell and returns the mitigation matrix.
pub fn run_defense_experiment(
    cfg: &ExperimentConfig,
    defenses: &[DefenseKind],
) -> Result<MitigationMatrix, ExperimentError> {
    if defenses.is_empty() {
        return Err(ExperimentError::Config("no defenses requested".into()));
    }
    let mut cfg = cfg.clone();
    cfg.defenses = defenses.to_vec();
    Ok(run_experiment(&cfg)?
        .mitigation
        .expect("defenses were configured"))
}
