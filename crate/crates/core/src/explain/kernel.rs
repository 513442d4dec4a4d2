//! Kernel approximation: fit a weighted linear surrogate over coalition
//! indicators, with Shapley-kernel weights and the efficiency constraint
//! that attributions sum to margin(x) - base. Fully enumerated, the
//! regression recovers the exact Shapley values; under a budget it uses
//! paired sampling with sizes drawn by kernel mass.

use rand::Rng;

use super::{
    binomial, coalition_values, shapley_kernel_weight, Background, ExplainError, ExplainerConfig,
};
use crate::matrix::{solve_linear_system, Matrix};
use crate::models::TrainedModel;
use crate::rng::rng_from;

pub fn kernel_shap(
    model: &TrainedModel,
    x: &[f64],
    bg: &Background,
    cfg: &ExplainerConfig,
) -> Result<(Vec<f64>, f64), ExplainError> {
    let m = x.len();
    if m != model.n_features {
        return Err(ExplainError::DimensionMismatch {
            expected: model.n_features,
            got: m,
        });
    }
    if bg.rows().n_cols() != m {
        return Err(ExplainError::BackgroundWidth {
            expected: m,
            got: bg.rows().n_cols(),
        });
    }
    let budget = cfg.n_coalition_samples;
    if budget < 2 * m {
        return Err(ExplainError::BudgetTooSmall {
            min: 2 * m,
            got: budget,
        });
    }

    let base = coalition_values(model, x, bg, &[0])?[0];
    let fx = model.margin(x)?;

    // With one feature the constraint determines everything.
    if m == 1 {
        return Ok((vec![fx - base], base));
    }

    let (masks, weights) = build_coalitions(m, budget, cfg.seed);
    let values = coalition_values(model, x, bg, &masks)?;
    let phi = solve_constrained_wls(m, &masks, &weights, &values, base, fx)?;
    Ok((phi, base))
}

/// Proper coalitions with their regression weights. Size pairs (s, m-s)
/// are enumerated completely while the budget allows, in decreasing
/// kernel-mass order; the remainder is filled by paired random draws with
/// sizes sampled proportional to the leftover kernel mass.
fn build_coalitions(m: usize, budget: usize, seed: u64) -> (Vec<u64>, Vec<f64>) {
    let total = if m < 63 { (1u64 << m) - 2 } else { u64::MAX };
    let mut masks = Vec::new();
    let mut weights = Vec::new();
    if (total as u128) <= budget as u128 {
        for mask in 1..=total {
            masks.push(mask);
            weights.push(shapley_kernel_weight(m, mask.count_ones() as usize));
        }
        return (masks, weights);
    }

    let mut remaining = budget;
    let mut sampled_sizes: Vec<usize> = Vec::new();
    let half = m / 2;
    for s in 1..=half {
        let pair_sizes: &[usize] = if s == m - s { &[s] } else { &[s, m - s] };
        let count: f64 = pair_sizes.iter().map(|&t| binomial(m, t)).sum();
        if count <= remaining as f64 {
            for &t in pair_sizes {
                let w = shapley_kernel_weight(m, t);
                enumerate_size(m, t, |mask| {
                    masks.push(mask);
                    weights.push(w);
                });
            }
            remaining -= count as usize;
        } else {
            sampled_sizes.extend(s..=m - s);
            break;
        }
    }
    if sampled_sizes.is_empty() || remaining == 0 {
        return (masks, weights);
    }

    // kernel mass left to cover, per remaining size
    let mass: Vec<f64> = sampled_sizes
        .iter()
        .map(|&s| shapley_kernel_weight(m, s) * binomial(m, s))
        .collect();
    let mass_total: f64 = mass.iter().sum();
    let per_draw_weight = mass_total / remaining as f64;
    let mut rng = rng_from(seed);
    let mut indices: Vec<usize> = (0..m).collect();
    while remaining > 0 {
        // draw a size by mass, then a uniform subset of that size
        let mut t = rng.gen::<f64>() * mass_total;
        let mut s = sampled_sizes[0];
        for (&sz, &ms) in sampled_sizes.iter().zip(&mass) {
            s = sz;
            if t < ms {
                break;
            }
            t -= ms;
        }
        for i in 0..s {
            let j = rng.gen_range(i..m);
            indices.swap(i, j);
        }
        let mask: u64 = indices[..s].iter().map(|&j| 1u64 << j).sum();
        masks.push(mask);
        weights.push(per_draw_weight);
        remaining -= 1;
        if remaining > 0 {
            // complement pairs with the same weight
            masks.push(!mask & ((1u64 << m) - 1));
            weights.push(per_draw_weight);
            remaining -= 1;
        }
    }
    (masks, weights)
}

fn enumerate_size(m: usize, s: usize, mut emit: impl FnMut(u64)) {
    // Gosper's hack: iterate all m-bit masks with s bits set.
    let limit = 1u64 << m;
    let mut mask = (1u64 << s) - 1;
    while mask < limit {
        emit(mask);
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        if c == 0 || r >= limit {
            break;
        }
        mask = r | (((mask ^ r) >> 2) / c);
    }
}

/// Solves the weighted least squares with the efficiency constraint by
/// eliminating the last feature: phi_m = (fx - base) - sum(others).
fn solve_constrained_wls(
    m: usize,
    masks: &[u64],
    weights: &[f64],
    values: &[f64],
    base: f64,
    fx: f64,
) -> Result<Vec<f64>, ExplainError> {
    let k = m - 1;
    let mut ata = Matrix::zeros(k, k);
    let mut atb = vec![0.0; k];
    let mut design_row = vec![0.0; k];
    for ((&mask, &w), &y) in masks.iter().zip(weights).zip(values) {
        let z_last = (mask >> (m - 1) & 1) as f64;
        for (j, d) in design_row.iter_mut().enumerate() {
            *d = (mask >> j & 1) as f64 - z_last;
        }
        let target = y - base - z_last * (fx - base);
        for i in 0..k {
            let wi = w * design_row[i];
            if wi == 0.0 {
                continue;
            }
            atb[i] += wi * target;
            for (j, &dj) in design_row.iter().enumerate().skip(i) {
                ata.set(i, j, ata.get(i, j) + wi * dj);
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            ata.set(i, j, ata.get(j, i));
        }
    }
    let head = solve_linear_system(&ata, &atb).map_err(|pivot| ExplainError::SingularSystem {
        pivot,
        rows: masks.len(),
        unknowns: k,
    })?;
    let mut phi = head;
    let tail = (fx - base) - phi.iter().sum::<f64>();
    phi.push(tail);
    Ok(phi)
}
