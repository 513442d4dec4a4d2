//! Attacker-scenario coverage: surrogate transfer, limited data,
//! black-box explanation, constrained feature universes, and their
//! composition; plus single-cell reproducibility of the sweep.

use shapmark_core::attack::{FeatureSelector, SelectorConfig, Strategy, ValueSelector};
use shapmark_core::dataset::{SplitSpec, SynthConfig};
use shapmark_core::experiment::{
    run_attack_experiment, run_experiment, DatasetSource, ExperimentConfig, Scenario, ScenarioTag,
};
use shapmark_core::explain::{ExplainMethod, ExplainerConfig};
use shapmark_core::models::{ModelKind, TrainConfig};

fn base_config() -> ExperimentConfig {
    ExperimentConfig {
        schema_version: 1,
        dataset: DatasetSource::Synthetic(SynthConfig {
            n_samples: 1200,
            n_features: 10,
            n_informative: 10,
            benign_subpopulations: 3,
            class_separation: 6.0,
            integer_feature_fraction: 1.0,
            seed: 0,
        }),
        split: SplitSpec {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        },
        victim: {
            let mut cfg = TrainConfig::new(ModelKind::GradientBoostedTrees, 0);
            cfg.trees.n_trees = 25;
            cfg.linear.epochs = 80;
            cfg
        },
        scenario: Scenario::default(),
        selector: SelectorConfig {
            feature_selector: FeatureSelector::LargeAbsShap,
            value_selector: ValueSelector::CountAbsShap,
            alpha: 1.0,
            beta: 1.0,
            trigger_size: 3,
        },
        strategy: Strategy::Independent,
        explainer: ExplainerConfig {
            method: ExplainMethod::Kernel,
            n_coalition_samples: 24,
            seed: 0,
            background_size: 6,
        },
        poison_fractions: vec![0.02],
        trigger_sizes: vec![3],
        n_seeds: 2,
        base_seed: 5,
        defenses: vec![],
        defense: Default::default(),
        threshold: 0.5,
    }
}

#[test]
fn scenario_validation_rules() {
    let cfg = base_config();
    // transfer without surrogate
    let mut s = Scenario {
        tags: vec![ScenarioTag::Transfer],
        ..Scenario::default()
    };
    assert!(s.validate(cfg.victim.kind).is_err());
    // surrogate equal to victim kind
    s.surrogate_kind = Some(ModelKind::GradientBoostedTrees);
    assert!(s.validate(cfg.victim.kind).is_err());
    s.surrogate_kind = Some(ModelKind::LogisticRegression);
    assert!(s.validate(cfg.victim.kind).is_ok());
    // data_limited needs a fraction below one
    let s = Scenario {
        tags: vec![ScenarioTag::DataLimited],
        data_fraction: Some(1.5),
        ..Scenario::default()
    };
    assert!(s.validate(cfg.victim.kind).is_err());
    let s = Scenario {
        tags: vec![ScenarioTag::DataLimited],
        ..Scenario::default()
    };
    assert_eq!(s.effective_data_fraction(), 0.2);
    assert!(s.validate(cfg.victim.kind).is_ok());
    // constrained needs a profile
    let s = Scenario {
        tags: vec![ScenarioTag::Constrained],
        ..Scenario::default()
    };
    assert!(s.validate(cfg.victim.kind).is_err());
}

#[test]
fn transfer_and_data_limited_attacks_still_land() {
    for tags in [
        vec![ScenarioTag::Transfer],
        vec![ScenarioTag::DataLimited],
        vec![ScenarioTag::BlackBox],
    ] {
        let mut cfg = base_config();
        cfg.scenario = Scenario {
            tags: tags.clone(),
            surrogate_kind: if tags.contains(&ScenarioTag::Transfer) {
                Some(ModelKind::LogisticRegression)
            } else {
                None
            },
            data_fraction: Some(0.4),
            constraint_profile: None,
        };
        let reports = run_attack_experiment(&cfg).unwrap();
        let report = &reports[0];
        assert!(report.error.is_none(), "{tags:?}: {:?}", report.error);
        let drop = report.mean("acc_f_x") - report.mean("acc_fb_xb");
        assert!(
            drop > 0.15,
            "{tags:?}: attack had no effect (drop {drop:.3})"
        );
        assert_eq!(report.scenario, cfg.scenario.label());
    }
}

#[test]
fn constrained_scenario_honors_the_profile() {
    let dir = tempfile::tempdir().unwrap();
    let profile_path = dir.path().join("profile.json");
    // only f1, f3, f4, f6 are touchable; f3 can only grow
    std::fs::write(
        &profile_path,
        serde_json::json!({
            "name": "four_features",
            "rules": [
                {"feature": "f1", "modifiable": true, "constraint": "free",
                 "value_domain": "observed_benign_only"},
                {"feature": "f3", "modifiable": true, "constraint": "additive_only",
                 "value_domain": "observed_benign_only"},
                {"feature": "f4", "modifiable": true, "constraint": "free",
                 "value_domain": "observed_benign_only"},
                {"feature": "f6", "modifiable": true, "constraint": "free",
                 "value_domain": "observed_benign_only"}
            ]
        })
        .to_string(),
    )
    .unwrap();
    let mut cfg = base_config();
    cfg.scenario = Scenario {
        tags: vec![ScenarioTag::Constrained],
        surrogate_kind: None,
        data_fraction: None,
        constraint_profile: Some(profile_path),
    };
    let reports = run_attack_experiment(&cfg).unwrap();
    let report = &reports[0];
    assert!(report.error.is_none(), "{:?}", report.error);
    let allowed = [1usize, 3, 4, 6];
    for row in &report.per_seed {
        for e in &row.trigger.entries {
            assert!(
                allowed.contains(&e.feature_index),
                "trigger used feature {} outside the profile",
                e.feature_index
            );
        }
    }
}

#[test]
fn composite_scenario_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let profile_path = dir.path().join("profile.json");
    let rules: Vec<serde_json::Value> = (0..6)
        .map(|i| {
            serde_json::json!({
                "feature": format!("f{i}"), "modifiable": true,
                "constraint": "free", "value_domain": "observed_benign_only"
            })
        })
        .collect();
    std::fs::write(
        &profile_path,
        serde_json::json!({"name": "six", "rules": rules}).to_string(),
    )
    .unwrap();
    let mut cfg = base_config();
    cfg.scenario = Scenario {
        tags: vec![
            ScenarioTag::Constrained,
            ScenarioTag::Transfer,
            ScenarioTag::DataLimited,
        ],
        surrogate_kind: Some(ModelKind::RandomForest),
        data_fraction: Some(0.5),
        constraint_profile: Some(profile_path),
    };
    let reports = run_attack_experiment(&cfg).unwrap();
    let report = &reports[0];
    assert!(report.error.is_none(), "{:?}", report.error);
    assert_eq!(report.scenario, "constrained-transfer-data_limited");
}

#[test]
fn single_cell_rerun_reproduces_its_row() {
    let mut sweep_cfg = base_config();
    sweep_cfg.poison_fractions = vec![0.01, 0.02, 0.04];
    let sweep = run_experiment(&sweep_cfg).unwrap();

    let mut single_cfg = base_config();
    single_cfg.poison_fractions = vec![0.02];
    let single = run_experiment(&single_cfg).unwrap();

    let from_sweep = sweep
        .reports
        .iter()
        .find(|r| r.cell.poison_fraction == 0.02)
        .unwrap();
    assert_eq!(from_sweep.per_seed, single.reports[0].per_seed);
    assert_eq!(from_sweep.summary, single.reports[0].summary);
}
