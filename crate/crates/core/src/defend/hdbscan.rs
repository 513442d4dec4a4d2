//! Hierarchical density clustering: mutual-reachability distances, a
//! minimum spanning tree, single-linkage hierarchy condensation at a
//! minimum cluster size, and leaf-cluster extraction. Points that never
//! join a leaf cluster are noise.

use crate::matrix::Matrix;

#[derive(Clone, Debug)]
pub struct ClusterLabels {
    /// Per row: `Some(cluster)` or `None` for noise.
    pub assignments: Vec<Option<usize>>,
    pub n_clusters: usize,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance to the `min_samples`-th nearest neighbor counting the point
/// itself, per the usual implementation convention; `min_samples = 1`
/// makes mutual reachability collapse to plain distance.
fn core_distances(data: &Matrix, min_samples: usize) -> Vec<f64> {
    let n = data.n_rows();
    let k = min_samples.saturating_sub(1).min(n - 1);
    (0..n)
        .map(|i| {
            if k == 0 {
                return 0.0;
            }
            let mut dists: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclidean(data.row(i), data.row(j)))
                .collect();
            dists.sort_by(f64::total_cmp);
            dists[k - 1]
        })
        .collect()
}

/// Prim's MST over the implicit mutual-reachability graph; O(n^2) time,
/// O(n) memory.
fn mutual_reachability_mst(data: &Matrix, core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = data.n_rows();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut best_from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    in_tree[0] = true;
    let mut latest = 0usize;
    for _ in 1..n {
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = euclidean(data.row(latest), data.row(j))
                .max(core[latest])
                .max(core[j]);
            if d < best[j] {
                best[j] = d;
                best_from[j] = latest;
            }
        }
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && best[j] < next_d {
                next_d = best[j];
                next = j;
            }
        }
        edges.push((best_from[next], next, next_d));
        in_tree[next] = true;
        latest = next;
    }
    edges
}

struct DendroNode {
    left: usize,
    right: usize,
    size: usize,
}

/// Single-linkage dendrogram from MST edges sorted ascending. Leaves are
/// node ids `0..n`; internals follow in merge order; the root is last.
fn build_dendrogram(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<DendroNode> {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut node_of: Vec<usize> = (0..n).collect(); // component root -> dendro node
    let mut nodes: Vec<DendroNode> = (0..n)
        .map(|_| DendroNode {
            left: usize::MAX,
            right: usize::MAX,
            size: 1,
        })
        .collect();
    for (a, b, _) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let (na, nb) = (node_of[ra], node_of[rb]);
        let id = nodes.len();
        nodes.push(DendroNode {
            left: na,
            right: nb,
            size: nodes[na].size + nodes[nb].size,
        });
        parent[ra] = rb;
        let rb = find(&mut parent, rb);
        node_of[rb] = id;
    }
    nodes
}

/// Condenses the dendrogram: walking from the root, a split where both
/// sides reach `min_cluster_size` creates two child clusters; a smaller
/// side falls out of the current cluster. Clusters are the leaves of the
/// condensed tree; the root is never a cluster.
fn condense(
    n: usize,
    nodes: &[DendroNode],
    min_cluster_size: usize,
) -> (Vec<usize>, Vec<bool>, usize) {
    let root = nodes.len() - 1;
    let mut exit_node = vec![usize::MAX; n];
    let mut has_children = vec![false];
    let mut n_condensed = 1usize;
    let mut stack = vec![(root, 0usize)];

    // sweep every point of a dendro subtree into the given condensed node
    let exit_subtree = |start: usize, cid: usize, exit_node: &mut Vec<usize>| {
        let mut walk = vec![start];
        while let Some(d) = walk.pop() {
            if d < n {
                exit_node[d] = cid;
            } else {
                walk.push(nodes[d].left);
                walk.push(nodes[d].right);
            }
        }
    };

    while let Some((start, cid)) = stack.pop() {
        let mut cur = start;
        loop {
            if cur < n {
                exit_node[cur] = cid;
                break;
            }
            let (l, r) = (nodes[cur].left, nodes[cur].right);
            let (sl, sr) = (nodes[l].size, nodes[r].size);
            match (sl >= min_cluster_size, sr >= min_cluster_size) {
                (true, true) => {
                    let cl = n_condensed;
                    let cr = n_condensed + 1;
                    n_condensed += 2;
                    has_children.push(false);
                    has_children.push(false);
                    has_children[cid] = true;
                    stack.push((l, cl));
                    stack.push((r, cr));
                    break;
                }
                (true, false) => {
                    exit_subtree(r, cid, &mut exit_node);
                    cur = l;
                }
                (false, true) => {
                    exit_subtree(l, cid, &mut exit_node);
                    cur = r;
                }
                (false, false) => {
                    exit_subtree(cur, cid, &mut exit_node);
                    break;
                }
            }
        }
    }
    (exit_node, has_children, n_condensed)
}

/// Full pipeline: core distances, MST, condensation, leaf extraction.
pub fn cluster_labels(data: &Matrix, min_cluster_size: usize, min_samples: usize) -> ClusterLabels {
    let n = data.n_rows();
    assert!(n >= 2, "clustering needs at least two rows");
    let min_cluster_size = min_cluster_size.max(2);
    let core = core_distances(data, min_samples);
    let mst = mutual_reachability_mst(data, &core);
    let nodes = build_dendrogram(n, mst);
    let (exit_node, has_children, n_condensed) = condense(n, &nodes, min_cluster_size);

    // leaf clusters: childless condensed nodes other than the root
    let mut cluster_index = vec![usize::MAX; n_condensed];
    let mut n_clusters = 0;
    for cid in 1..n_condensed {
        if !has_children[cid] {
            cluster_index[cid] = n_clusters;
            n_clusters += 1;
        }
    }
    let assignments = exit_node
        .iter()
        .map(|&cid| {
            let c = cluster_index[cid];
            if c == usize::MAX {
                None
            } else {
                Some(c)
            }
        })
        .collect();
    ClusterLabels {
        assignments,
        n_clusters,
    }
}

/// Mean silhouette per cluster (Euclidean, against the nearest other
/// cluster). With a single cluster the score is defined as 0.
pub(crate) fn cluster_silhouettes(data: &Matrix, labels: &ClusterLabels) -> Vec<f64> {
    let k = labels.n_clusters;
    if k == 0 {
        return Vec::new();
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, a) in labels.assignments.iter().enumerate() {
        if let Some(c) = a {
            members[*c].push(i);
        }
    }
    if k == 1 {
        return vec![0.0];
    }
    let mut sums = vec![0.0; k];
    for (c, rows) in members.iter().enumerate() {
        for &p in rows {
            let mut mean_to = vec![0.0; k];
            for (c2, rows2) in members.iter().enumerate() {
                let mut acc = 0.0;
                for &q in rows2 {
                    if q != p {
                        acc += euclidean(data.row(p), data.row(q));
                    }
                }
                let denom = if c2 == c { rows2.len() - 1 } else { rows2.len() };
                mean_to[c2] = if denom == 0 { 0.0 } else { acc / denom as f64 };
            }
            let a = mean_to[c];
            let b = mean_to
                .iter()
                .enumerate()
                .filter(|&(c2, _)| c2 != c)
                .map(|(_, &v)| v)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                sums[c] += (b - a) / denom;
            }
        }
    }
    sums.iter()
        .zip(&members)
        .map(|(s, m)| if m.is_empty() { 0.0 } else { s / m.len() as f64 })
        .collect()
}

/// Adjusted Rand index between two labelings; `None` entries are treated
/// as one extra shared category.
pub fn adjusted_rand_index(a: &[Option<usize>], b: &[Option<usize>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let to_idx = |labels: &[Option<usize>]| -> Vec<usize> {
        let max = labels.iter().flatten().copied().max().map_or(0, |m| m + 1);
        labels.iter().map(|l| l.map_or(max, |v| v)).collect()
    };
    let la = to_idx(a);
    let lb = to_idx(b);
    let ka = la.iter().max().unwrap() + 1;
    let kb = lb.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in la.iter().zip(&lb) {
        table[x][y] += 1;
    }
    let comb2 = |x: u64| (x * x.saturating_sub(1)) / 2;
    let sum_ij: u64 = table.iter().flatten().map(|&v| comb2(v)).sum();
    let sum_a: u64 = table.iter().map(|row| comb2(row.iter().sum())).sum();
    let sum_b: u64 = (0..kb)
        .map(|j| comb2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = comb2(n as u64) as f64;
    let expected = sum_a as f64 * sum_b as f64 / total;
    let max_index = 0.5 * (sum_a + sum_b) as f64;
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_ij as f64 - expected) / (max_index - expected)
}
