//! Sampled-kernel accuracy against the exact oracle on models small
//! enough to enumerate.

use shapmark_core::dataset::{generate_synthetic, SynthConfig};
use shapmark_core::explain::{
    exact_shapley, explain_dataset, kernel_shap, Background, ExplainMethod, ExplainerConfig,
};
use shapmark_core::models::{train, ModelKind, TrainConfig};

#[test]
fn sampled_kernel_tracks_exact_within_tolerance_over_20_seeds() {
    let ds = generate_synthetic(&SynthConfig {
        n_samples: 300,
        n_features: 12,
        n_informative: 12,
        benign_subpopulations: 2,
        class_separation: 5.0,
        integer_feature_fraction: 0.5,
        seed: 9,
    })
    .unwrap();
    let mut cfg = TrainConfig::new(ModelKind::GradientBoostedTrees, 9);
    cfg.trees.n_trees = 20;
    let model = train(&ds, &cfg).unwrap();
    let bg = Background::benign_sample(&ds, 12, 9).unwrap();
    let x = ds.row(5).to_vec();

    let (phi_exact, _) = exact_shapley(&model, &x, &bg).unwrap();
    let max_phi = phi_exact.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tolerance = 0.05 * max_phi + 1e-3;
    // budget 2048 < 2^12 - 2 proper coalitions, so this genuinely samples
    for seed in 0..20 {
        let kcfg = ExplainerConfig {
            method: ExplainMethod::Kernel,
            n_coalition_samples: 2048,
            seed,
            background_size: 12,
        };
        let (phi, _) = kernel_shap(&model, &x, &bg, &kcfg).unwrap();
        let max_delta = phi_exact
            .iter()
            .zip(&phi)
            .fold(0.0f64, |a, (e, k)| a.max((e - k).abs()));
        assert!(
            max_delta <= tolerance,
            "seed {seed}: delta {max_delta:.6} > tolerance {tolerance:.6}"
        );
    }
}

#[test]
fn exact_dataset_sweep_satisfies_additivity_everywhere() {
    let ds = generate_synthetic(&SynthConfig {
        n_samples: 120,
        n_features: 8,
        n_informative: 8,
        benign_subpopulations: 2,
        class_separation: 5.0,
        integer_feature_fraction: 0.5,
        seed: 2,
    })
    .unwrap();
    let cfg = TrainConfig::new(ModelKind::LinearSvm, 2);
    let model = train(&ds, &cfg).unwrap();
    let bg = Background::benign_sample(&ds, 10, 2).unwrap();
    let ecfg = ExplainerConfig {
        method: ExplainMethod::Exact,
        n_coalition_samples: 0,
        seed: 2,
        background_size: 10,
    };
    let shap = explain_dataset(&model, &ds, &bg, &ecfg).unwrap();
    for i in 0..ds.n_rows() {
        let margin = model.margin(ds.row(i)).unwrap();
        let total: f64 = shap.base_value + shap.values.row(i).iter().sum::<f64>();
        assert!(
            (total - margin).abs() <= 1e-6,
            "row {i}: additivity off by {}",
            (total - margin).abs()
        );
    }
}

#[test]
fn single_row_dataset_matches_per_sample_call() {
    let ds = generate_synthetic(&SynthConfig {
        n_samples: 40,
        n_features: 6,
        n_informative: 6,
        benign_subpopulations: 2,
        class_separation: 5.0,
        integer_feature_fraction: 0.5,
        seed: 4,
    })
    .unwrap();
    let cfg = TrainConfig::new(ModelKind::LogisticRegression, 4);
    let model = train(&ds, &cfg).unwrap();
    let bg = Background::benign_sample(&ds, 8, 4).unwrap();
    let one = ds.select_rows(&[3]);
    let ecfg = ExplainerConfig {
        method: ExplainMethod::Exact,
        n_coalition_samples: 0,
        seed: 4,
        background_size: 8,
    };
    let matrix = explain_dataset(&model, &one, &bg, &ecfg).unwrap();
    let (phi, base) = exact_shapley(&model, one.row(0), &bg).unwrap();
    assert_eq!(matrix.n_samples(), 1);
    assert_eq!(matrix.values.row(0), &phi[..]);
    assert_eq!(matrix.base_value, base);
    assert_eq!(matrix.sample_ids, vec![one.id(0)]);
}
