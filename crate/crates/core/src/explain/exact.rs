//! Exact Shapley values by full subset enumeration. The value function is
//! interventional: v(S) averages the model margin over background rows
//! with the explained sample's values spliced in on S.

use super::{coalition_values, Background, ExplainError, MAX_EXACT_FEATURES};
use crate::models::TrainedModel;

/// phi_j = sum over S not containing j of
/// |S|! (M-|S|-1)! / M! * [v(S + j) - v(S)], base = v(empty).
///
/// The per-size weight is 1 / (M * C(M-1, |S|)).
pub fn exact_shapley(
    model: &TrainedModel,
    x: &[f64],
    bg: &Background,
) -> Result<(Vec<f64>, f64), ExplainError> {
    let m = x.len();
    if m > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures {
            max: MAX_EXACT_FEATURES,
            got: m,
        });
    }
    if m != model.n_features {
        return Err(ExplainError::DimensionMismatch {
            expected: model.n_features,
            got: m,
        });
    }
    bg.rows(); // width checked below via coalition eval
    if bg.rows().n_cols() != m {
        return Err(ExplainError::BackgroundWidth {
            expected: m,
            got: bg.rows().n_cols(),
        });
    }

    let n_masks = 1usize << m;
    let masks: Vec<u64> = (0..n_masks as u64).collect();
    let v = coalition_values(model, x, bg, &masks)?;

    let weights: Vec<f64> = (0..m)
        .map(|s| 1.0 / (m as f64 * super::binomial(m - 1, s)))
        .collect();

    let mut phi = vec![0.0; m];
    for mask in 0..n_masks {
        let size = (mask as u64).count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if mask >> j & 1 == 0 {
                *p += weights[size] * (v[mask | (1 << j)] - v[mask]);
            }
        }
    }
    Ok((phi, v[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::test_support::linear_model;
    use crate::matrix::Matrix;
    use crate::models::{ModelKind, ModelParams, TrainedModel};

    fn bg_rows(rows: &[Vec<f64>]) -> Background {
        Background::new(Matrix::from_rows(rows), None).unwrap()
    }

    #[test]
    fn linear_model_closed_form() {
        // single background row r: phi_j = w_j (x_j - r_j)
        let model = linear_model(vec![2.0, -1.0, 0.5], 3.0);
        let bg = bg_rows(&[vec![1.0, 1.0, 1.0]]);
        let x = [2.0, 4.0, -2.0];
        let (phi, base) = exact_shapley(&model, &x, &bg).unwrap();
        let expected = [2.0 * (2.0 - 1.0), -(4.0 - 1.0), 0.5 * (-2.0 - 1.0)];
        for (p, e) in phi.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
        // base = margin of the background row
        assert!((base - (2.0 - 1.0 + 0.5 + 3.0)).abs() < 1e-12);
        // additivity
        let total: f64 = base + phi.iter().sum::<f64>();
        assert!((total - model.margin(&x).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sample_equal_to_background_gets_zero_attribution() {
        let model = linear_model(vec![1.5, -2.5], 0.25);
        let bg = bg_rows(&[vec![3.0, -1.0]]);
        let (phi, base) = exact_shapley(&model, &[3.0, -1.0], &bg).unwrap();
        assert!(phi.iter().all(|&v| v.abs() < 1e-12));
        assert!((base - model.margin(&[3.0, -1.0]).unwrap()).abs() < 1e-12);
    }

    /// Hand-built product model f(x) = x0 * x1 via a margin a GBDT cannot
    /// express linearly: use a two-leaf tree pair? Simpler: a tiny mock via
    /// the net is overkill, so use a 2-tree GBDT encoding the product on
    /// the four corners of {0,1}^2.
    #[test]
    fn product_model_splits_credit_evenly() {
        // margin(x) = 1 iff x0 > 0.5 and x1 > 0.5 else 0, matching x0*x1 on
        // the corners used by enumeration with x=(1,1), bg=(0,0).
        use crate::models::{DecisionTree, Gbdt, TreeNode};
        let tree = DecisionTree {
            nodes: vec![
                TreeNode::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                TreeNode::Leaf { value: 0.0 },
                TreeNode::Split {
                    feature: 1,
                    threshold: 0.5,
                    left: 3,
                    right: 4,
                },
                TreeNode::Leaf { value: 0.0 },
                TreeNode::Leaf { value: 1.0 },
            ],
        };
        let model = TrainedModel {
            kind: ModelKind::GradientBoostedTrees,
            n_features: 2,
            seed: 0,
            config_hash: 0,
            params: ModelParams::Gbdt(Gbdt {
                base_score: 0.0,
                trees: vec![tree],
            }),
        };
        let bg = bg_rows(&[vec![0.0, 0.0]]);
        let (phi, base) = exact_shapley(&model, &[1.0, 1.0], &bg).unwrap();
        assert!((phi[0] - 0.5).abs() < 1e-12);
        assert!((phi[1] - 0.5).abs() < 1e-12);
        assert!(base.abs() < 1e-12);
    }

    #[test]
    fn null_player_gets_zero() {
        // weight 0 on feature 1: never contributes
        let model = linear_model(vec![4.0, 0.0], -1.0);
        let bg = bg_rows(&[vec![0.5, 9.0], vec![-0.5, -9.0]]);
        let (phi, _) = exact_shapley(&model, &[2.0, 100.0], &bg).unwrap();
        assert!(phi[1].abs() < 1e-12);
    }

    #[test]
    fn symmetric_features_get_equal_credit() {
        let model = linear_model(vec![3.0, 3.0], 0.0);
        let bg = bg_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let (phi, _) = exact_shapley(&model, &[2.0, 2.0], &bg).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-12);
    }

    #[test]
    fn too_many_features_is_an_error() {
        let model = linear_model(vec![0.0; 21], 0.0);
        let bg = bg_rows(&[vec![0.0; 21]]);
        assert!(matches!(
            exact_shapley(&model, &[0.0; 21], &bg),
            Err(ExplainError::TooManyFeatures { .. })
        ));
    }
}
