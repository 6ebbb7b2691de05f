use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Optimizer hyperparameters shared by every local trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.002, momentum: 0.9, batch_size: 16, local_epochs: 1 }
    }
}

/// Momentum buffers, owned by one client across rounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

/// Cosine decay `lr0 · ½(1 + cos(π t / T))`.
pub fn cosine_lr(lr0: f64, round: usize, total: usize) -> Result<f64> {
    if total == 0 || round > total {
        return config(format!("round {round} outside schedule of {total} rounds"));
    }
    let progress = round as f64 / total as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// `v ← μ v + g; p ← p − lr_t v` with `lr_t` from [`cosine_lr`].
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut SgdState,
    cfg: &SgdConfig,
    round: usize,
    total: usize,
) -> Result<()> {
    if params.len() != grads.len() {
        return config(format!("{} parameters but {} gradients", params.len(), grads.len()));
    }
    if state.velocity.is_empty() {
        state.velocity = vec![0.0; params.len()];
    } else if state.velocity.len() != params.len() {
        return config(format!("velocity buffer of {} for {} parameters", state.velocity.len(), params.len()));
    }
    let lr = cosine_lr(cfg.lr, round, total)?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        *v = cfg.momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}
