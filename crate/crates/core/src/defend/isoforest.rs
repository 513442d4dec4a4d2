//! Isolation forest: random axis-aligned splits on uniform subsamples,
//! depth capped at log2 of the subsample size. Anomalies isolate in few
//! splits, giving short average paths and scores above 0.5.

use rand::Rng;
use rayon::prelude::*;

use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from};

const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

/// Average unsuccessful-search path length c(n) of a binary search tree:
/// `2 H(n-1) - 2 (n-1)/n`, with the harmonic number approximated by
/// `ln(n-1) + gamma`. c(1) = 0 and c(2) = 1 by convention.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let nf = n as f64;
            2.0 * ((nf - 1.0).ln() + EULER_MASCHERONI) - 2.0 * (nf - 1.0) / nf
        }
    }
}

/// s = 2^(-depth / c(n)); depth equal to c(n) gives exactly 0.5.
pub fn score_from_depth(mean_depth: f64, subsample: usize) -> f64 {
    let c = average_path_length(subsample);
    if c <= 0.0 {
        return 0.5;
    }
    2f64.powf(-mean_depth / c)
}

enum IsoNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    External {
        size: usize,
    },
}

struct IsoTree {
    nodes: Vec<IsoNode>,
}

impl IsoTree {
    fn path_length(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        let mut depth = 0.0;
        loop {
            match &self.nodes[idx] {
                IsoNode::External { size } => return depth + average_path_length(*size),
                IsoNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] < *threshold { *left } else { *right };
                    depth += 1.0;
                }
            }
        }
    }
}

pub struct IsolationForest {
    trees: Vec<IsoTree>,
    subsample: usize,
}

impl IsolationForest {
    /// Builds `n_trees` trees on seeded subsamples drawn without
    /// replacement. Deterministic per seed.
    pub fn fit(data: &Matrix, n_trees: usize, subsample: usize, seed: u64) -> Self {
        let n = data.n_rows();
        let subsample = subsample.min(n).max(2);
        let depth_cap = (subsample as f64).log2().ceil() as usize;
        let trees = (0..n_trees)
            .map(|t| {
                let mut rng = rng_from(derive_seed(seed, &[0x150f, t as u64]));
                let mut pool: Vec<usize> = (0..n).collect();
                for i in 0..subsample {
                    let j = rng.gen_range(i..n);
                    pool.swap(i, j);
                }
                let rows: Vec<usize> = pool[..subsample].to_vec();
                let mut nodes = Vec::new();
                build_node(data, rows, 0, depth_cap, &mut rng, &mut nodes);
                IsoTree { nodes }
            })
            .collect();
        IsolationForest { trees, subsample }
    }

    /// Anomaly score in (0, 1]; above 0.5 means shorter-than-average paths.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mean_depth: f64 = self
            .trees
            .iter()
            .map(|t| t.path_length(x))
            .sum::<f64>()
            / self.trees.len() as f64;
        score_from_depth(mean_depth, self.subsample)
    }

    pub fn scores(&self, data: &Matrix) -> Vec<f64> {
        (0..data.n_rows())
            .into_par_iter()
            .map(|i| self.score(data.row(i)))
            .collect()
    }
}

fn build_node(
    data: &Matrix,
    rows: Vec<usize>,
    depth: usize,
    depth_cap: usize,
    rng: &mut impl Rng,
    nodes: &mut Vec<IsoNode>,
) -> usize {
    let id = nodes.len();
    if rows.len() <= 1 || depth >= depth_cap {
        nodes.push(IsoNode::External { size: rows.len() });
        return id;
    }
    let d = data.n_cols();
    // features with spread in this node
    let mut ranges = Vec::with_capacity(d);
    for f in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in &rows {
            let v = data.get(i, f);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi > lo {
            ranges.push((f, lo, hi));
        }
    }
    if ranges.is_empty() {
        nodes.push(IsoNode::External { size: rows.len() });
        return id;
    }
    let (feature, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
    let threshold = rng.gen_range(lo..hi);
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
        rows.into_iter().partition(|&i| data.get(i, feature) < threshold);

    nodes.push(IsoNode::External { size: 0 }); // placeholder
    let left = build_node(data, left_rows, depth + 1, depth_cap, rng, nodes);
    let right = build_node(data, right_rows, depth + 1, depth_cap, rng, nodes);
    nodes[id] = IsoNode::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}
