//! Linear classifiers: logistic regression on log-loss and a linear SVM
//! on hinge loss, both trained by full-batch (sub)gradient descent with L2
//! regularization. The SVM's probability is an uncalibrated logistic
//! squashing of its margin; the attack pipeline only consumes margins and
//! labels from it.

use serde::{Deserialize, Serialize};

use super::{logistic, LinearParams};
use crate::dataset::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    #[inline]
    pub fn margin(&self, x: &[f64]) -> f64 {
        let mut acc = self.bias;
        for (w, v) in self.weights.iter().zip(x) {
            acc += w * v;
        }
        acc
    }
}

pub fn train_logistic(ds: &Dataset, params: &LinearParams, _seed: u64) -> LinearModel {
    let n = ds.n_rows() as f64;
    let d = ds.n_features();
    let mut model = LinearModel {
        weights: vec![0.0; d],
        bias: 0.0,
    };
    let mut grad_w = vec![0.0; d];
    for _ in 0..params.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for i in 0..ds.n_rows() {
            let x = ds.row(i);
            let err = logistic(model.margin(x)) - ds.label(i) as f64;
            for (g, v) in grad_w.iter_mut().zip(x) {
                *g += err * v;
            }
            grad_b += err;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= params.learning_rate * (g / n + params.l2 * *w);
        }
        model.bias -= params.learning_rate * grad_b / n;
    }
    model
}

pub fn train_svm(ds: &Dataset, params: &LinearParams, _seed: u64) -> LinearModel {
    let n = ds.n_rows() as f64;
    let d = ds.n_features();
    let mut model = LinearModel {
        weights: vec![0.0; d],
        bias: 0.0,
    };
    let mut grad_w = vec![0.0; d];
    for _ in 0..params.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for i in 0..ds.n_rows() {
            let x = ds.row(i);
            let y = if ds.label(i) == 1 { 1.0 } else { -1.0 };
            // hinge subgradient: active when y * margin < 1
            if y * model.margin(x) < 1.0 {
                for (g, v) in grad_w.iter_mut().zip(x) {
                    *g -= y * v;
                }
                grad_b -= y;
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= params.learning_rate * (g / n + params.l2 * *w);
        }
        model.bias -= params.learning_rate * grad_b / n;
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, FeatureKind, FeatureSpec};
    use crate::matrix::Matrix;

    fn line_ds() -> Dataset {
        let rows = vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]];
        let labels = vec![0, 0, 1, 1];
        let specs = vec![FeatureSpec::new(0, "f0", FeatureKind::Real)];
        Dataset::new(Matrix::from_rows(&rows), labels, specs, (0..4).collect()).unwrap()
    }

    #[test]
    fn margin_is_dot_product_plus_bias() {
        let m = LinearModel {
            weights: vec![2.0, -1.0],
            bias: 0.5,
        };
        assert_eq!(m.margin(&[1.0, 3.0]), 2.0 - 3.0 + 0.5);
    }

    #[test]
    fn both_trainers_separate_a_line() {
        let ds = line_ds();
        let params = LinearParams::default();
        for m in [train_logistic(&ds, &params, 0), train_svm(&ds, &params, 0)] {
            assert!(m.margin(&[2.0]) > 0.0);
            assert!(m.margin(&[-2.0]) < 0.0);
        }
    }
}
