//! Decision-tree machinery: quantized candidate thresholds, a flat node
//! representation shared by the forest and the booster, and the random
//! forest trainer (Gini splits, bootstrap rows, sqrt-feature sampling,
//! best-first growth to a leaf budget).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TreeParams;
use crate::dataset::Dataset;
use crate::rng::{derive_seed, rng_from};

pub const MAX_THRESHOLD_BINS: usize = 255;
const MIN_LEAF_ROWS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    /// Walks from the root; `x[feature] <= threshold` goes left.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf(value: f64) -> Self {
        DecisionTree {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }
}

/// Per-feature quantized candidate thresholds plus the per-row bin index
/// of every value. Bin `b <= i` sends a row left of threshold `i`.
pub struct Thresholds {
    pub per_feature: Vec<Vec<f64>>,
    bins: Vec<u8>,
    n_features: usize,
}

impl Thresholds {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let n = ds.n_rows();
        let d = ds.n_features();
        let mut per_feature = Vec::with_capacity(d);
        let mut bins = vec![0u8; n * d];
        let mut col: Vec<f64> = Vec::with_capacity(n);
        for j in 0..d {
            col.clear();
            col.extend(ds.features().col(j));
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            let thresholds: Vec<f64> = if sorted.len() <= MAX_THRESHOLD_BINS + 1 {
                sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                // midpoints between evenly spaced quantiles of the distinct values
                let mut qs: Vec<f64> = (1..=MAX_THRESHOLD_BINS)
                    .map(|k| {
                        let pos = k * (sorted.len() - 1) / (MAX_THRESHOLD_BINS + 1);
                        0.5 * (sorted[pos] + sorted[pos + 1])
                    })
                    .collect();
                qs.dedup();
                qs
            };
            for (i, &v) in col.iter().enumerate() {
                let b = thresholds.partition_point(|&t| t < v);
                bins[i * d + j] = b as u8;
            }
            per_feature.push(thresholds);
        }
        Thresholds {
            per_feature,
            bins,
            n_features: d,
        }
    }

    #[inline]
    pub fn bin(&self, row: usize, feature: usize) -> usize {
        self.bins[row * self.n_features + feature] as usize
    }

    pub fn n_candidates(&self, feature: usize) -> usize {
        self.per_feature[feature].len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Mean of member-tree leaf class-1 frequencies; in [0,1] by construction.
    pub fn probability(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.eval(x)).sum();
        sum / self.trees.len() as f64
    }
}

struct PendingSplit {
    gain: f64,
    order: usize,
    node: usize,
    feature: usize,
    threshold: f64,
    rows: Vec<usize>,
    split_bin: usize,
}

pub fn train_forest(ds: &Dataset, params: &TreeParams, seed: u64) -> RandomForest {
    let thresholds = Thresholds::from_dataset(ds);
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = rng_from(derive_seed(seed, &[0x0f0e, t as u64]));
            let rows: Vec<usize> = (0..ds.n_rows())
                .map(|_| rng.gen_range(0..ds.n_rows()))
                .collect();
            grow_gini_tree(ds, &thresholds, rows, params.max_leaves, &mut rng)
        })
        .collect();
    RandomForest { trees }
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

fn leaf_frequency(ds: &Dataset, rows: &[usize]) -> f64 {
    let pos = rows.iter().filter(|&&i| ds.label(i) == 1).count();
    pos as f64 / rows.len() as f64
}

/// Best gini split over a random sqrt-sized feature subset; returns
/// (impurity decrease, feature, threshold, split bin).
fn best_gini_split(
    ds: &Dataset,
    thresholds: &Thresholds,
    rows: &[usize],
    rng: &mut impl Rng,
) -> Option<(f64, usize, f64, usize)> {
    let d = ds.n_features();
    let n_try = (d as f64).sqrt().ceil() as usize;
    let mut feats: Vec<usize> = (0..d).collect();
    for i in 0..n_try {
        let j = rng.gen_range(i..d);
        feats.swap(i, j);
    }
    let total = rows.len() as f64;
    let total_pos = rows.iter().filter(|&&i| ds.label(i) == 1).count() as f64;
    let parent = gini(total_pos, total);

    let mut best: Option<(f64, usize, f64, usize)> = None;
    let mut count = [0f64; MAX_THRESHOLD_BINS + 1];
    let mut pos = [0f64; MAX_THRESHOLD_BINS + 1];
    for &f in feats.iter().take(n_try) {
        let n_cand = thresholds.n_candidates(f);
        if n_cand == 0 {
            continue;
        }
        count[..=n_cand].iter_mut().for_each(|c| *c = 0.0);
        pos[..=n_cand].iter_mut().for_each(|c| *c = 0.0);
        for &i in rows {
            let b = thresholds.bin(i, f);
            count[b] += 1.0;
            pos[b] += ds.label(i) as f64;
        }
        let mut left_n = 0.0;
        let mut left_pos = 0.0;
        for b in 0..n_cand {
            left_n += count[b];
            left_pos += pos[b];
            let right_n = total - left_n;
            if left_n < MIN_LEAF_ROWS as f64 || right_n < MIN_LEAF_ROWS as f64 {
                continue;
            }
            let right_pos = total_pos - left_pos;
            let weighted =
                (left_n * gini(left_pos, left_n) + right_n * gini(right_pos, right_n)) / total;
            let gain = parent - weighted;
            let better = match best {
                None => gain > 1e-12,
                Some((bg, bf, _, _)) => gain > bg + 1e-15 || (gain > 1e-12 && gain >= bg - 1e-15 && f < bf),
            };
            if better {
                best = Some((gain, f, thresholds.per_feature[f][b], b));
            }
        }
    }
    best
}

fn grow_gini_tree(
    ds: &Dataset,
    thresholds: &Thresholds,
    rows: Vec<usize>,
    max_leaves: usize,
    rng: &mut impl Rng,
) -> DecisionTree {
    let mut nodes = vec![TreeNode::Leaf {
        value: leaf_frequency(ds, &rows),
    }];
    let mut heap: Vec<PendingSplit> = Vec::new();
    let mut order = 0usize;
    if let Some((gain, f, t, b)) = best_gini_split(ds, thresholds, &rows, rng) {
        heap.push(PendingSplit {
            gain,
            order,
            node: 0,
            feature: f,
            threshold: t,
            rows,
            split_bin: b,
        });
    }
    let mut n_leaves = 1;
    while n_leaves < max_leaves {
        // pick the highest-gain pending split; ties go to the earliest node
        let Some(best_idx) = heap
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.gain
                    .total_cmp(&b.gain)
                    .then(b.order.cmp(&a.order))
            })
            .map(|(i, _)| i)
        else {
            break;
        };
        let split = heap.swap_remove(best_idx);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = split
            .rows
            .iter()
            .partition(|&&i| thresholds.bin(i, split.feature) <= split.split_bin);
        let left_id = nodes.len();
        let right_id = nodes.len() + 1;
        nodes.push(TreeNode::Leaf {
            value: leaf_frequency(ds, &left_rows),
        });
        nodes.push(TreeNode::Leaf {
            value: leaf_frequency(ds, &right_rows),
        });
        nodes[split.node] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: left_id,
            right: right_id,
        };
        n_leaves += 1;
        for (node, rows) in [(left_id, left_rows), (right_id, right_rows)] {
            if rows.len() >= 2 * MIN_LEAF_ROWS {
                if let Some((gain, f, t, b)) = best_gini_split(ds, thresholds, &rows, rng) {
                    order += 1;
                    heap.push(PendingSplit {
                        gain,
                        order,
                        node,
                        feature: f,
                        threshold: t,
                        rows,
                        split_bin: b,
                    });
                }
            }
        }
    }
    DecisionTree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureKind, FeatureSpec};
    use crate::matrix::Matrix;

    #[test]
    fn tree_eval_walks_splits() {
        let tree = DecisionTree {
            nodes: vec![
                TreeNode::Split {
                    feature: 0,
                    threshold: 0.0,
                    left: 1,
                    right: 2,
                },
                TreeNode::Leaf { value: -1.0 },
                TreeNode::Leaf { value: 1.0 },
            ],
        };
        assert_eq!(tree.eval(&[-5.0]), -1.0);
        assert_eq!(tree.eval(&[0.0]), -1.0); // boundary goes left
        assert_eq!(tree.eval(&[5.0]), 1.0);
    }

    #[test]
    fn forest_probability_is_mean_of_leaf_values() {
        let forest = RandomForest {
            trees: vec![DecisionTree::leaf(0.25), DecisionTree::leaf(0.75)],
        };
        assert_eq!(forest.probability(&[0.0]), 0.5);
    }

    #[test]
    fn forest_separates_easy_data() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..80 {
            let c = if i % 2 == 0 { 4.0 } else { -4.0 };
            rows.push(vec![c + (i % 7) as f64 * 0.1, (i % 5) as f64]);
            labels.push((i % 2 == 0) as u8);
        }
        let specs = vec![
            FeatureSpec::new(0, "f0", FeatureKind::Real),
            FeatureSpec::new(1, "f1", FeatureKind::Real),
        ];
        let ds = Dataset::new(Matrix::from_rows(&rows), labels, specs, (0..80).collect()).unwrap();
        let forest = train_forest(&ds, &TreeParams::default(), 3);
        assert!(forest.probability(&[4.0, 1.0]) > 0.8);
        assert!(forest.probability(&[-4.0, 1.0]) < 0.2);
    }
}
