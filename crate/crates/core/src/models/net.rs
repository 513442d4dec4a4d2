//! Small fully-connected net: ReLU hidden layers into one sigmoid output,
//! trained with plain mini-batch gradient descent, inverted dropout, and
//! per-feature input standardization in place of batch normalization.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{logistic, NetParams};
use crate::dataset::Dataset;
use crate::rng::rng_from;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let w = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.bias[o];
            for (wi, xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            *slot = acc;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    /// Hidden layers (ReLU) followed by the single-output linear layer.
    pub layers: Vec<DenseLayer>,
}

impl FeedForwardNet {
    /// Pre-sigmoid output (the margin).
    pub fn margin(&self, x: &[f64]) -> f64 {
        let mut cur: Vec<f64> = x
            .iter()
            .zip(self.feature_means.iter().zip(&self.feature_stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let last = self.layers.len() - 1;
        let mut next = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            next.resize(layer.n_out, 0.0);
            layer.forward_into(&cur, &mut next);
            if li != last {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }
}

pub fn train_net(ds: &Dataset, params: &NetParams, seed: u64) -> FeedForwardNet {
    train_net_inner(ds, params, seed, None)
}

/// Training variant that records the full-data loss after every epoch
/// (evaluated without dropout); used by convergence checks.
pub fn train_net_traced(ds: &Dataset, params: &NetParams, seed: u64) -> (FeedForwardNet, Vec<f64>) {
    let mut trace = Vec::with_capacity(params.epochs);
    let net = train_net_inner(ds, params, seed, Some(&mut trace));
    (net, trace)
}

fn train_net_inner(
    ds: &Dataset,
    params: &NetParams,
    seed: u64,
    mut loss_trace: Option<&mut Vec<f64>>,
) -> FeedForwardNet {
    let n = ds.n_rows();
    let d = ds.n_features();
    let mut rng = rng_from(seed);

    let mut means = vec![0.0; d];
    let mut stds = vec![0.0; d];
    for row in ds.features().rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    for row in ds.features().rows() {
        for ((s, m), v) in stds.iter_mut().zip(&means).zip(row) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut stds {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let standardized: Vec<f64> = ds
        .features()
        .rows()
        .flat_map(|row| {
            row.iter()
                .zip(means.iter().zip(&stds))
                .map(|(v, (m, s))| (v - m) / s)
                .collect::<Vec<f64>>()
        })
        .collect();

    let mut widths = vec![d];
    widths.extend_from_slice(&params.layer_widths);
    widths.push(1);
    let mut layers: Vec<DenseLayer> = widths
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let he = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).unwrap();
            DenseLayer {
                n_in,
                n_out,
                weights: (0..n_in * n_out).map(|_| he.sample(&mut rng)).collect(),
                bias: vec![0.0; n_out],
            }
        })
        .collect();
    let n_layers = layers.len();
    let keep = 1.0 - params.dropout_rate;

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            // forward, keeping activations per layer
            let b = batch.len();
            let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
            let mut input = Vec::with_capacity(b * d);
            for &i in batch {
                input.extend_from_slice(&standardized[i * d..(i + 1) * d]);
            }
            activations.push(input);
            let mut dropout_masks: Vec<Vec<f64>> = Vec::with_capacity(n_layers - 1);
            for (li, layer) in layers.iter().enumerate() {
                let prev = activations.last().unwrap();
                let mut z = vec![0.0; b * layer.n_out];
                for r in 0..b {
                    layer.forward_into(
                        &prev[r * layer.n_in..(r + 1) * layer.n_in],
                        &mut z[r * layer.n_out..(r + 1) * layer.n_out],
                    );
                }
                if li != n_layers - 1 {
                    for v in &mut z {
                        *v = v.max(0.0);
                    }
                    let mask: Vec<f64> = if params.dropout_rate > 0.0 {
                        z.iter()
                            .map(|_| {
                                if rng.gen::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    } else {
                        vec![1.0; z.len()]
                    };
                    for (v, m) in z.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    dropout_masks.push(mask);
                }
                activations.push(z);
            }

            // output delta: sigmoid(z) - y, averaged over the batch
            let mut delta: Vec<f64> = activations[n_layers]
                .iter()
                .enumerate()
                .map(|(r, &z)| (logistic(z) - ds.label(batch[r]) as f64) / b as f64)
                .collect();

            for li in (0..n_layers).rev() {
                let layer = &layers[li];
                let prev = &activations[li];
                let mut next_delta = vec![0.0; b * layer.n_in];
                let mut grad_w = vec![0.0; layer.n_in * layer.n_out];
                let mut grad_b = vec![0.0; layer.n_out];
                for r in 0..b {
                    let dz = &delta[r * layer.n_out..(r + 1) * layer.n_out];
                    let x = &prev[r * layer.n_in..(r + 1) * layer.n_in];
                    for o in 0..layer.n_out {
                        let g = dz[o];
                        if g == 0.0 {
                            continue;
                        }
                        grad_b[o] += g;
                        let w_row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                        let gw = &mut grad_w[o * layer.n_in..(o + 1) * layer.n_in];
                        let dx = &mut next_delta[r * layer.n_in..(r + 1) * layer.n_in];
                        for i in 0..layer.n_in {
                            gw[i] += g * x[i];
                            dx[i] += g * w_row[i];
                        }
                    }
                }
                if li > 0 {
                    // through dropout mask, then ReLU derivative
                    let mask = &dropout_masks[li - 1];
                    let act = &activations[li];
                    for (i, v) in next_delta.iter_mut().enumerate() {
                        *v *= mask[i];
                        if act[i] <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                let layer = &mut layers[li];
                for (w, g) in layer.weights.iter_mut().zip(&grad_w) {
                    *w -= params.learning_rate * g;
                }
                for (bv, g) in layer.bias.iter_mut().zip(&grad_b) {
                    *bv -= params.learning_rate * g;
                }
                delta = next_delta;
            }
        }

        if let Some(trace) = loss_trace.as_deref_mut() {
            let net = FeedForwardNet {
                feature_means: means.clone(),
                feature_stds: stds.clone(),
                layers: layers.clone(),
            };
            let mut loss = 0.0;
            for i in 0..n {
                let z = net.margin(ds.row(i));
                let y = ds.label(i) as f64;
                // numerically stable BCE on the logit
                loss += z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
            }
            trace.push(loss / n as f64);
        }
    }

    FeedForwardNet {
        feature_means: means,
        feature_stds: stds,
        layers,
    }
}
