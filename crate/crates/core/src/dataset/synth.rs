//! Synthetic two-class generator shaped like a desk-scale malware corpus:
//! a diverse, high-variance benign class against fewer tight malware
//! clusters, with a mix of integer-valued and real-valued features.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Dataset, DatasetError, FeatureKind, FeatureSpec, SynthConfig, BENIGN, MALWARE};
use crate::matrix::Matrix;
use crate::rng::rng_from;

struct ClusterShape {
    center: Vec<f64>,
    scale: f64,
}

/// Shared heavy-tail contamination: a small share of cells in either
/// class is replaced by wide class-neutral noise, the way rare odd values
/// (timestamps, version numbers) show up in both goodware and malware.
/// Keeps rare feature values class-ambiguous instead of deep in one
/// class's tail.
const TAIL_NOISE_FRACTION: f64 = 0.12;
const TAIL_NOISE_SCALE: f64 = 8.0;

/// Deterministic pure function of the config: the same `SynthConfig`
/// yields a byte-identical dataset.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset, DatasetError> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed);

    // Feature roles: which columns carry class signal, which are integer-valued.
    let mut cols: Vec<usize> = (0..cfg.n_features).collect();
    cols.shuffle(&mut rng);
    let informative: Vec<bool> = {
        let mut mask = vec![false; cfg.n_features];
        for &c in cols.iter().take(cfg.n_informative) {
            mask[c] = true;
        }
        mask
    };
    cols.shuffle(&mut rng);
    let n_int = ((cfg.n_features as f64) * cfg.integer_feature_fraction).round() as usize;
    let integer: Vec<bool> = {
        let mut mask = vec![false; cfg.n_features];
        for &c in cols.iter().take(n_int) {
            mask[c] = true;
        }
        mask
    };

    // Benign: wide, diverse clusters. Malware: fewer, tighter clusters
    // shifted by class_separation on the informative dimensions.
    let center_spread = Normal::new(0.0, 2.0).unwrap();
    let benign_scale = Uniform::new(1.0, 3.0);
    let malware_scale = Uniform::new(0.3, 1.0);
    let benign_clusters: Vec<ClusterShape> = (0..cfg.benign_subpopulations)
        .map(|_| ClusterShape {
            center: (0..cfg.n_features)
                .map(|j| {
                    if informative[j] {
                        center_spread.sample(&mut rng)
                    } else {
                        0.0
                    }
                })
                .collect(),
            scale: benign_scale.sample(&mut rng),
        })
        .collect();
    // Malware clusters sit near a benign cluster, displaced by
    // class_separation in aggregate norm spread across the informative
    // dimensions. Per-feature marginals stay overlapped; the classes
    // separate on the joint pattern, so no single feature value is
    // class-certain on its own.
    let n_malware_clusters = (cfg.benign_subpopulations / 2).max(1);
    let malware_clusters: Vec<ClusterShape> = (0..n_malware_clusters)
        .map(|m| {
            let anchor = &benign_clusters[m % benign_clusters.len()];
            // near-even per-dimension shares (bounded jitter, random sign)
            // keep any small feature subset from carrying the class signal
            let mut direction: Vec<f64> = (0..cfg.n_features)
                .map(|j| {
                    if informative[j] {
                        let magnitude = rng.gen_range(0.5..1.0);
                        if rng.gen::<bool>() {
                            magnitude
                        } else {
                            -magnitude
                        }
                    } else {
                        0.0
                    }
                })
                .collect();
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                direction.iter_mut().for_each(|v| *v *= cfg.class_separation / norm);
            }
            ClusterShape {
                center: anchor
                    .center
                    .iter()
                    .zip(&direction)
                    .map(|(c, d)| c + d)
                    .collect(),
                scale: malware_scale.sample(&mut rng),
            }
        })
        .collect();

    let n_malware = cfg.n_samples / 2;
    let n_benign = cfg.n_samples - n_malware;
    let mut rows = Vec::with_capacity(cfg.n_samples);
    let mut labels = Vec::with_capacity(cfg.n_samples);
    for _ in 0..n_benign {
        let shape = &benign_clusters[rng.gen_range(0..benign_clusters.len())];
        rows.push(sample_row(shape, &informative, &integer, &mut rng));
        labels.push(BENIGN);
    }
    for _ in 0..n_malware {
        let shape = &malware_clusters[rng.gen_range(0..malware_clusters.len())];
        rows.push(sample_row(shape, &informative, &integer, &mut rng));
        labels.push(MALWARE);
    }

    // Interleave classes so row order carries no label signal.
    let mut order: Vec<usize> = (0..cfg.n_samples).collect();
    order.shuffle(&mut rng);
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
    let labels: Vec<u8> = order.iter().map(|&i| labels[i]).collect();

    let specs: Vec<FeatureSpec> = (0..cfg.n_features)
        .map(|j| {
            FeatureSpec::new(
                j,
                format!("f{j}"),
                if integer[j] {
                    FeatureKind::Integer
                } else {
                    FeatureKind::Real
                },
            )
        })
        .collect();
    let ids = (0..cfg.n_samples as u64).collect();
    Dataset::new(Matrix::from_rows(&rows), labels, specs, ids)
}

fn sample_row(
    shape: &ClusterShape,
    informative: &[bool],
    integer: &[bool],
    rng: &mut impl Rng,
) -> Vec<f64> {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    informative
        .iter()
        .zip(integer)
        .enumerate()
        .map(|(j, (&inf, &int))| {
            let v = if rng.gen::<f64>() < TAIL_NOISE_FRACTION {
                TAIL_NOISE_SCALE * std_normal.sample(rng)
            } else if inf {
                shape.center[j] + shape.scale * std_normal.sample(rng)
            } else {
                std_normal.sample(rng)
            };
            if int {
                v.round()
            } else {
                v
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            n_samples: 200,
            n_features: 8,
            n_informative: 5,
            benign_subpopulations: 3,
            class_separation: 4.0,
            integer_feature_fraction: 0.5,
            seed: 7,
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.has_both_classes());
        assert_eq!(a.n_rows(), 200);
        assert_eq!(
            a.specs()
                .iter()
                .filter(|s| s.kind == FeatureKind::Integer)
                .count(),
            4
        );
    }

    #[test]
    fn rejects_invalid_config() {
        let cfg = SynthConfig {
            n_samples: 100,
            n_features: 4,
            n_informative: 9,
            benign_subpopulations: 2,
            class_separation: 4.0,
            integer_feature_fraction: 0.5,
            seed: 7,
        };
        assert!(generate_synthetic(&cfg).is_err());
    }
}
