//! Regularizers acting on text features, gradient projection and
//! trajectory averaging.

use crate::error::{config, Result};
use crate::numerics;
use crate::vlm::TextBank;

/// `λ · mean_{s,j} |t_sj − r_j|²`; adds the feature gradient into `grads`.
pub(crate) fn squared_anchor_penalty(bank: &TextBank, refs: &[Vec<f64>], lambda: f64, grads: &mut [Vec<f64>]) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let (sets, classes) = (bank.sets(), bank.classes());
    let w = lambda / (sets * classes) as f64;
    let mut total = 0.0;
    for s in 0..sets {
        for (j, r) in refs.iter().enumerate() {
            let t = bank.feature(s, j);
            let g = &mut grads[s * classes + j];
            for ((gi, ti), ri) in g.iter_mut().zip(t).zip(r) {
                let diff = ti - ri;
                total += diff * diff;
                *gi += 2.0 * w * diff;
            }
        }
    }
    w * total
}

/// `μ · mean_{s,j} |t_sj − r_j|₁`; subgradient 0 at ties.
pub(crate) fn l1_anchor_penalty(bank: &TextBank, refs: &[Vec<f64>], mu: f64, grads: &mut [Vec<f64>]) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let (sets, classes) = (bank.sets(), bank.classes());
    let w = mu / (sets * classes) as f64;
    let mut total = 0.0;
    for s in 0..sets {
        for (j, r) in refs.iter().enumerate() {
            let t = bank.feature(s, j);
            let g = &mut grads[s * classes + j];
            for ((gi, ti), ri) in g.iter_mut().zip(t).zip(r) {
                let diff = ti - ri;
                total += diff.abs();
                if diff != 0.0 {
                    *gi += w * diff.signum();
                }
            }
        }
    }
    w * total
}

/// `λ · Σ_{s<s'} mean_j max(0, cos(t_sj, t_s'j))²` over unit features.
pub(crate) fn orthogonality_penalty(bank: &TextBank, lambda: f64, grads: &mut [Vec<f64>]) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let (sets, classes) = (bank.sets(), bank.classes());
    let w = lambda / classes as f64;
    let mut total = 0.0;
    for s in 0..sets {
        for s2 in s + 1..sets {
            for j in 0..classes {
                let (a, b) = (bank.feature(s, j), bank.feature(s2, j));
                let c = numerics::dot(a, b);
                if c <= 0.0 {
                    continue;
                }
                total += c * c;
                numerics::axpy(2.0 * w * c, b, &mut grads[s * classes + j]);
                numerics::axpy(2.0 * w * c, a, &mut grads[s2 * classes + j]);
            }
        }
    }
    w * total
}

/// Removes the part of `g_task` that conflicts with `g_general`.
pub fn project_prograd(g_task: &[f64], g_general: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if g_task.len() != g_general.len() {
        return config(format!("gradient lengths {} and {} differ", g_task.len(), g_general.len()));
    }
    let d = numerics::dot(g_task, g_general);
    let nn = numerics::dot(g_general, g_general);
    if d >= 0.0 || nn == 0.0 {
        return Ok(g_task.to_vec());
    }
    let mut out = g_task.to_vec();
    numerics::axpy(-lambda * d / nn, g_general, &mut out);
    Ok(out)
}

/// Gaussian-weighted mean of the last `window` snapshots, centred on the
/// newest one. An infinite `sigma` weighs them equally.
pub fn trajectory_average(snapshots: &[Vec<f64>], window: usize, sigma: f64) -> Result<Vec<f64>> {
    if window == 0 {
        return config("trajectory window must be at least 1");
    }
    if !(sigma > 0.0) {
        return config(format!("trajectory sigma must be positive, got {sigma}"));
    }
    let Some(last) = snapshots.last() else {
        return config("trajectory average of no snapshots");
    };
    let tail = &snapshots[snapshots.len().saturating_sub(window)..];
    let weights: Vec<f64> = (0..tail.len())
        .map(|i| {
            let age = (tail.len() - 1 - i) as f64;
            (-age * age / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; last.len()];
    for (snap, w) in tail.iter().zip(&weights) {
        numerics::axpy(w / total, snap, &mut out);
    }
    Ok(out)
}
