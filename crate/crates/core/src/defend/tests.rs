use super::*;
use crate::dataset::{Dataset, FeatureKind, FeatureSpec};
use crate::explain::ShapMatrix;
use crate::rng::rng_from;
use rand_distr::{Distribution, Normal};

fn shap_fixture(importances: &[f64]) -> ShapMatrix {
    // one row whose values reproduce the requested importances exactly
    ShapMatrix {
        values: Matrix::from_rows(&[importances.to_vec()]),
        base_value: 0.0,
        sample_ids: vec![0],
    }
}

fn benign_ds(rows: &[Vec<f64>]) -> Dataset {
    let d = rows[0].len();
    let specs: Vec<FeatureSpec> = (0..d)
        .map(|i| FeatureSpec::new(i, format!("f{i}"), FeatureKind::Real))
        .collect();
    Dataset::new(
        Matrix::from_rows(rows),
        vec![0; rows.len()],
        specs,
        (0..rows.len() as u64).collect(),
    )
    .unwrap()
}

fn reduced(rows: &[Vec<f64>]) -> ReducedSpace {
    ReducedSpace {
        selected_features: (0..rows[0].len()).collect(),
        scale: vec![(-1.0, 1.0); rows[0].len()],
        matrix: Matrix::from_rows(rows),
        row_ids: (0..rows.len() as u64).collect(),
    }
}

#[test]
fn reduce_space_picks_top_k_and_standardizes() {
    let ds = benign_ds(&[
        vec![0.0, 10.0, 5.0],
        vec![4.0, 20.0, 5.0],
        vec![2.0, 15.0, 5.0],
    ]);
    let shap = shap_fixture(&[0.3, -0.9, 0.1]);
    let rs = reduce_space(&ds, &shap, 2).unwrap();
    // |importance| = (0.3, 0.9, 0.1) -> features [1, 0]
    assert_eq!(rs.selected_features, vec![1, 0]);
    // column for feature 1 spans [10,20] -> standardized to [-1, 0, 1] order-wise
    assert_eq!(rs.matrix.get(0, 0), -1.0);
    assert_eq!(rs.matrix.get(1, 0), 1.0);
    assert_eq!(rs.matrix.get(2, 0), 0.0);
    assert!(rs.matrix.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn reduce_space_constant_column_maps_to_zero() {
    let ds = benign_ds(&[vec![5.0, 1.0], vec![5.0, 2.0]]);
    let shap = shap_fixture(&[-3.0, 0.5]);
    let rs = reduce_space(&ds, &shap, 2).unwrap();
    assert_eq!(rs.selected_features, vec![0, 1]);
    assert_eq!(rs.matrix.col(0).collect::<Vec<_>>(), vec![0.0, 0.0]);
}

#[test]
fn reduce_space_k_bounds() {
    let ds = benign_ds(&[vec![1.0], vec![2.0]]);
    let shap = shap_fixture(&[1.0]);
    assert!(matches!(
        reduce_space(&ds, &shap, 2),
        Err(DefendError::KTooLarge { k: 2, available: 1 })
    ));
    let rs = reduce_space(&ds, &shap, 1).unwrap();
    assert_eq!(rs.selected_features, vec![0]);
}

#[test]
fn spectral_three_row_hand_case() {
    // centered top direction is (1,0); the +-1 rows score highest
    let eps = 1e-6;
    let rs = reduced(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, eps]]);
    let report = spectral_filter(&rs, 0.67).unwrap(); // ceil(2.01) = 3? 0.67*3=2.01 -> 3
    assert_eq!(report.removed_ids.len(), 3);
    let report = spectral_filter(&rs, 0.5).unwrap(); // ceil(1.5) = 2
    assert_eq!(report.removed_ids, vec![0, 1]);
    let report = spectral_filter(&rs, 0.1).unwrap(); // ceil(0.3) = 1, tie -> row 0
    assert_eq!(report.removed_ids, vec![0]);
}

#[test]
fn spectral_removes_exactly_ceil_fraction() {
    let mut rng = rng_from(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..4).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let rs = reduced(&rows);
    let report = spectral_filter(&rs, DEFAULT_SPECTRAL_FRACTION).unwrap();
    assert_eq!(report.removed_ids.len(), 30); // ceil(0.15 * 200)
    let report = spectral_filter(&rs, 0.151).unwrap();
    assert_eq!(report.removed_ids.len(), 31); // ceil(30.2)
}

#[test]
fn spectral_scores_are_centering_invariant() {
    let mut rng = rng_from(4);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|_| (0..3).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let shifted: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip([7.0, -3.0, 11.0]).map(|(v, c)| v + c).collect())
        .collect();
    let a = spectral_filter(&reduced(&rows), 0.2).unwrap();
    let b = spectral_filter(&reduced(&shifted), 0.2).unwrap();
    assert_eq!(a.removed_ids, b.removed_ids);
}

#[test]
fn spectral_degenerate_identical_rows_warns_and_still_removes() {
    let rs = reduced(&vec![vec![2.0, 2.0]; 10]);
    let report = spectral_filter(&rs, 0.15).unwrap();
    assert_eq!(report.removed_ids.len(), 2); // ceil(1.5)
    assert_eq!(report.removed_ids, vec![0, 1]); // deterministic row order
    assert!(!report.notes.is_empty());
}

/// Cyclic Jacobi eigensolver for small symmetric matrices; the dense
/// oracle for the power-iteration direction.
fn jacobi_top_eigenvector(m: &Matrix) -> Vec<f64> {
    let n = m.n_rows();
    let mut a = m.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a.get(p, q).abs();
            }
        }
        if off < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let tau = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let top = (0..n)
        .max_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)))
        .unwrap();
    (0..n).map(|i| v.get(i, top)).collect()
}

#[test]
fn power_iteration_matches_jacobi_oracle() {
    for (seed, n) in [(1u64, 3usize), (2, 5), (3, 8), (4, 10)] {
        // symmetric PSD with a clear spectral gap: Q diag(l) Q^T
        let mut rng = rng_from(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut q: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
                let qj = q[j].clone();
                for (x, y) in q[i].iter_mut().zip(&qj) {
                    *x -= dot * y;
                }
            }
            let norm: f64 = q[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            q[i].iter_mut().for_each(|x| *x /= norm);
        }
        let eigs: Vec<f64> = (0..n).map(|i| 10.0 * 0.5f64.powi(i as i32)).collect();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (k, &e) in eigs.iter().enumerate() {
                    acc += e * q[k][i] * q[k][j];
                }
                m.set(i, j, acc);
            }
        }
        let pi = power_iteration_top_eigenvector(&m);
        let ja = jacobi_top_eigenvector(&m);
        let dot: f64 = pi.iter().zip(&ja).map(|(a, b)| a * b).sum();
        let sign = dot.signum();
        for (a, b) in pi.iter().zip(&ja) {
            assert!(
                (a - sign * b).abs() < 1e-6,
                "seed {seed}: {pi:?} vs {ja:?}"
            );
        }
    }
}

fn blob(center: &[f64], n: usize, sigma: f64, rng: &mut impl rand::Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).unwrap();
    (0..n)
        .map(|_| {
            center
                .iter()
                .map(|c| c + normal.sample(rng))
                .collect::<Vec<f64>>()
        })
        .collect()
}

#[test]
fn clustering_recovers_two_separated_blobs() {
    let mut rng = rng_from(11);
    let mut rows = blob(&[0.0, 0.0], 30, 0.05, &mut rng);
    rows.extend(blob(&[5.0, 5.0], 30, 0.05, &mut rng));

    // planted-structure oracle: exhaustive pairwise distances confirm the
    // blobs are separable (max intra < min inter)
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut max_intra = 0.0f64;
    let mut min_inter = f64::INFINITY;
    for i in 0..60 {
        for j in i + 1..60 {
            let d = dist(&rows[i], &rows[j]);
            if (i < 30) == (j < 30) {
                max_intra = max_intra.max(d);
            } else {
                min_inter = min_inter.min(d);
            }
        }
    }
    assert!(max_intra < min_inter);

    let labels = cluster_labels(&Matrix::from_rows(&rows), 5, 10);
    assert_eq!(labels.n_clusters, 2);
    let planted: Vec<Option<usize>> = (0..60).map(|i| Some((i >= 30) as usize)).collect();
    assert_eq!(adjusted_rand_index(&labels.assignments, &planted), 1.0);

    // tight well-separated blobs: silhouettes near 1, so the filter drops
    // most members
    let rs = reduced(&rows);
    let report = density_cluster_filter(&rs, 5.0 / 60.0, 10.0 / 60.0, 7).unwrap();
    assert!(
        report.removed_ids.len() > 48,
        "expected most of 60 removed, got {}",
        report.removed_ids.len()
    );
}

#[test]
fn clustering_uniform_noise_is_all_noise() {
    let mut rng = rng_from(5);
    let rows: Vec<Vec<f64>> = (0..50)
        .map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()])
        .collect();
    let labels = cluster_labels(&Matrix::from_rows(&rows), 20, 10);
    assert_eq!(labels.n_clusters, 0);
    assert!(labels.assignments.iter().all(|a| a.is_none()));
    let rs = reduced(&rows);
    let report = density_cluster_filter(&rs, 0.4, 0.2, 3).unwrap();
    assert!(report.removed_ids.is_empty());
}

#[test]
fn density_filter_is_deterministic_per_seed() {
    let mut rng = rng_from(21);
    let mut rows = blob(&[0.0, 0.0], 25, 0.3, &mut rng);
    rows.extend(blob(&[4.0, 4.0], 25, 0.3, &mut rng));
    let rs = reduced(&rows);
    let a = density_cluster_filter(&rs, 0.1, 0.05, 9).unwrap();
    let b = density_cluster_filter(&rs, 0.1, 0.05, 9).unwrap();
    assert_eq!(a.removed_ids, b.removed_ids);
}

#[test]
fn isolation_score_boundary_and_monotonicity() {
    // depth equal to c(n) scores exactly 0.5
    for n in [2usize, 16, 256] {
        let s = score_from_depth(average_path_length(n), n);
        assert!((s - 0.5).abs() < 1e-12);
    }
    // deeper isolation -> strictly lower score; scores stay in (0, 1]
    let mut prev = score_from_depth(0.0, 256);
    assert!(prev <= 1.0 && prev > 0.0);
    for d in 1..=20 {
        let s = score_from_depth(d as f64, 256);
        assert!(s < prev);
        assert!(s > 0.0);
        prev = s;
    }
}

#[test]
fn isolation_forest_flags_far_outlier_above_all_inliers() {
    let mut rng = rng_from(13);
    let mut rows = blob(&[0.0, 0.0], 120, 0.2, &mut rng);
    rows.push(vec![9.0, -9.0]);
    let m = Matrix::from_rows(&rows);
    let forest = IsolationForest::fit(&m, 100, 64, 5);
    let scores = forest.scores(&m);
    let outlier = scores[120];
    assert!(outlier > 0.5, "outlier score {outlier}");
    for (i, &s) in scores[..120].iter().enumerate() {
        assert!(s < outlier, "inlier {i} score {s} >= outlier {outlier}");
    }
}

#[test]
fn isolation_filter_reports_flagged_ids() {
    let mut rng = rng_from(17);
    let mut rows = blob(&[0.0, 0.0], 100, 0.2, &mut rng);
    rows.push(vec![7.0, 7.0]);
    let rs = reduced(&rows);
    let report = isolation_forest_filter(&rs, 100, 64, 5).unwrap();
    assert!(report.removed_ids.contains(&100));
    let again = isolation_forest_filter(&rs, 100, 64, 5).unwrap();
    assert_eq!(report.removed_ids, again.removed_ids);
}

#[test]
fn filter_report_scores_against_ground_truth() {
    let mut report = FilterReport::new(DefenseKind::SpectralSignature, vec![1, 2, 3, 4]);
    report.score_against(&[2, 4, 9]);
    assert_eq!(report.poisons_removed, 2);
    assert_eq!(report.goodware_removed, 2);
    assert_eq!(
        report.poisons_removed + report.goodware_removed,
        report.removed_ids.len()
    );
}
