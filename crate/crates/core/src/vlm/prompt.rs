use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::numerics::Matrix;
use crate::rng::{self, gaussian_vec, tags};

/// Token count of the hand-crafted template (the analogue of "a photo of a").
pub const HANDCRAFTED_LEN: usize = 4;

/// Standard deviation of the seeded random prompt initialization.
pub const DEFAULT_INIT_STD: f64 = 0.02;

/// Learnable soft-prompt vectors: `sets × len × dim` reals.
///
/// Each set is one sequence of `len` context tokens placed in front of the
/// class-name tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    sets: usize,
    len: usize,
    dim: usize,
    values: Vec<f64>,
}

impl PromptContext {
    pub fn zeros(sets: usize, len: usize, dim: usize) -> Result<Self> {
        Self::from_values(sets, len, dim, vec![0.0; sets * len * dim])
    }

    pub fn from_values(sets: usize, len: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if sets == 0 || len == 0 || dim == 0 {
            return config(format!("prompt context shape {sets}x{len}x{dim} has an empty axis"));
        }
        if values.len() != sets * len * dim {
            return config(format!("prompt context {sets}x{len}x{dim} needs {} values, got {}", sets * len * dim, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return config("prompt context contains non-finite values");
        }
        Ok(Self { sets, len, dim, values })
    }

    /// Zero-mean Gaussian initialization with the given standard deviation.
    pub fn random(sets: usize, len: usize, dim: usize, std: f64, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(&[tags::INIT, seed]);
        Self::from_values(sets, len, dim, gaussian_vec(&mut rng, sets * len * dim, std))
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parameter_count(&self) -> usize {
        self.sets * self.len * self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Flat `len × dim` slice of one prompt set.
    pub fn set(&self, s: usize) -> &[f64] {
        let n = self.len * self.dim;
        &self.values[s * n..(s + 1) * n]
    }

    pub fn set_mut(&mut self, s: usize) -> &mut [f64] {
        let n = self.len * self.dim;
        &mut self.values[s * n..(s + 1) * n]
    }

    /// Prompt sets `range` as a new context.
    pub fn select(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let n = self.len * self.dim;
        let count = range.len();
        Self::from_values(count, self.len, self.dim, self.values[range.start * n..range.end * n].to_vec())
    }

    /// Concatenates the prompt sets of `self` and `other`.
    pub fn concat(&self, other: &PromptContext) -> Result<Self> {
        if self.len != other.len || self.dim != other.dim {
            return config("cannot concatenate prompt contexts of different token shape");
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self::from_values(self.sets + other.sets, self.len, self.dim, values)
    }

    pub fn set_matrix(&self, s: usize) -> Matrix {
        Matrix::from_vec(self.len, self.dim, self.set(s).to_vec()).expect("shape is consistent")
    }
}

/// Deterministic stand-in for a hand-crafted template context.
///
/// Token entries are `N(0, token_std²)` drawn from a stream keyed by `seed`,
/// so server and clients reconstruct the same context independently.
pub fn build_handcrafted_context(seed: u64, len: usize, dim: usize, token_std: f64) -> Result<PromptContext> {
    let mut rng = rng::stream(&[tags::MODEL, 0x48414e44, seed]);
    PromptContext::from_values(1, len, dim, gaussian_vec(&mut rng, len * dim, token_std))
}
