//! Frozen text-encoder surrogates with hand-written backward passes.
//!
//! `LinearPool`: mean-pool tokens, fixed projection, `tanh`, L2-normalize.
//! `AttentionBlock`: one residual self-attention block in front of the same
//! pooling head.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::numerics::{self, Matrix};
use crate::rng::{self, gaussian_vec, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    #[default]
    LinearPool,
    AttentionBlock,
}

#[derive(Debug, Clone, PartialEq)]
struct AttentionWeights {
    query: Matrix,
    key: Matrix,
    value: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTextEncoder {
    variant: EncoderVariant,
    d_token: usize,
    d_feature: usize,
    projection: Matrix,
    bias: Vec<f64>,
    attention: Option<AttentionWeights>,
}

#[derive(Debug, Clone)]
struct AttentionCache {
    query: Matrix,
    key: Matrix,
    value: Matrix,
    weights: Matrix,
}

/// Forward result retaining what the backward pass needs.
#[derive(Debug, Clone)]
pub struct TextEncoding {
    pub feature: Vec<f64>,
    tokens: Matrix,
    activation: Vec<f64>,
    activation_norm: f64,
    attention: Option<AttentionCache>,
}

impl FrozenTextEncoder {
    pub fn new(variant: EncoderVariant, d_token: usize, d_feature: usize, gain: f64, seed: u64) -> Result<Self> {
        if d_token == 0 || d_feature == 0 {
            return config("encoder dimensions must be positive");
        }
        let mut rng = rng::stream(&[tags::MODEL, 0x454e43, seed]);
        let proj_std = gain / (d_token as f64).sqrt();
        let projection = Matrix::from_vec(d_feature, d_token, gaussian_vec(&mut rng, d_feature * d_token, proj_std))?;
        let bias = gaussian_vec(&mut rng, d_feature, 0.01);
        let attention = match variant {
            EncoderVariant::LinearPool => None,
            EncoderVariant::AttentionBlock => {
                let std = 1.0 / (d_token as f64).sqrt();
                let mut draw = |s: f64| Matrix::from_vec(d_token, d_token, gaussian_vec(&mut rng, d_token * d_token, s));
                Some(AttentionWeights { query: draw(std)?, key: draw(std)?, value: draw(0.5 * std)? })
            }
        };
        Ok(Self { variant, d_token, d_feature, projection, bias, attention })
    }

    pub fn variant(&self) -> EncoderVariant {
        self.variant
    }

    pub fn d_token(&self) -> usize {
        self.d_token
    }

    pub fn d_feature(&self) -> usize {
        self.d_feature
    }

    /// Hash of every frozen weight, for before/after freezing checks.
    pub fn fingerprint(&self) -> u64 {
        let mut parts: Vec<u64> = vec![self.d_token as u64, self.d_feature as u64];
        parts.extend(self.projection.as_slice().iter().map(|v| v.to_bits()));
        parts.extend(self.bias.iter().map(|v| v.to_bits()));
        if let Some(att) = &self.attention {
            for m in [&att.query, &att.key, &att.value] {
                parts.extend(m.as_slice().iter().map(|v| v.to_bits()));
            }
        }
        rng::derive_seed(&parts)
    }

    /// Encodes an `n × d_token` token sequence into a unit feature.
    pub fn encode(&self, tokens: Matrix) -> Result<TextEncoding> {
        if tokens.cols() != self.d_token || tokens.rows() == 0 {
            return config(format!("encoder expects n x {} tokens, got {} x {}", self.d_token, tokens.rows(), tokens.cols()));
        }
        let (mixed, attention) = match &self.attention {
            None => (None, None),
            Some(w) => {
                let query = tokens.matmul(&w.query);
                let key = tokens.matmul(&w.key);
                let value = tokens.matmul(&w.value);
                let scale = 1.0 / (self.d_token as f64).sqrt();
                let mut weights = query.matmul_t(&key);
                for r in 0..weights.rows() {
                    let row = weights.row_mut(r);
                    row.iter_mut().for_each(|v| *v *= scale);
                    let probs = numerics::softmax_temp(row, 1.0)?;
                    row.copy_from_slice(&probs);
                }
                let mut out = weights.matmul(&value);
                numerics::axpy(1.0, tokens.as_slice(), out.as_mut_slice());
                (Some(out), Some(AttentionCache { query, key, value, weights }))
            }
        };
        let body = mixed.as_ref().unwrap_or(&tokens);
        let n = body.rows() as f64;
        let mut pooled = vec![0.0; self.d_token];
        for row in body.iter_rows() {
            numerics::axpy(1.0 / n, row, &mut pooled);
        }
        let pre = self.projection.matvec(&pooled);
        let activation: Vec<f64> = pre.iter().zip(&self.bias).map(|(z, b)| (z + b).tanh()).collect();
        let (feature, activation_norm) = numerics::normalize(&activation)?;
        Ok(TextEncoding { feature, tokens, activation, activation_norm, attention })
    }

    /// Maps `∂L/∂feature` to `∂L/∂tokens` (`n × d_token`). Weights get nothing.
    pub fn backward(&self, enc: &TextEncoding, grad_feature: &[f64]) -> Matrix {
        let grad_act = numerics::normalize_backward(&enc.feature, enc.activation_norm, grad_feature);
        let grad_pre: Vec<f64> = grad_act.iter().zip(&enc.activation).map(|(g, a)| g * (1.0 - a * a)).collect();
        let n = enc.tokens.rows();
        let grad_pooled = self.projection.matvec_t(&grad_pre);
        let mut grad_body = Matrix::zeros(n, self.d_token);
        for r in 0..n {
            grad_body.row_mut(r).iter_mut().zip(&grad_pooled).for_each(|(g, p)| *g = p / n as f64);
        }
        let (Some(w), Some(cache)) = (&self.attention, &enc.attention) else {
            return grad_body;
        };
        // body = X + A V, A = softmax(Q Kᵀ s), Q = X Wq, K = X Wk, V = X Wv
        let scale = 1.0 / (self.d_token as f64).sqrt();
        let grad_weights = grad_body.matmul_t(&cache.value);
        let grad_value = cache.weights.t_matmul(&grad_body);
        let mut grad_scores = Matrix::zeros(n, n);
        for r in 0..n {
            let a = cache.weights.row(r);
            let ga = grad_weights.row(r);
            let inner = numerics::dot(a, ga);
            for c in 0..n {
                grad_scores.set(r, c, a[c] * (ga[c] - inner) * scale);
            }
        }
        let grad_query = grad_scores.matmul(&cache.key);
        let grad_key = grad_scores.t_matmul(&cache.query);
        let mut grad_tokens = grad_body;
        for (g, wm) in [(&grad_query, &w.query), (&grad_key, &w.key), (&grad_value, &w.value)] {
            let contrib = g.matmul_t(wm);
            numerics::axpy(1.0, contrib.as_slice(), grad_tokens.as_mut_slice());
        }
        grad_tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, relative_error};

    fn tokens(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = rng::stream(&[seed]);
        Matrix::from_vec(n, d, gaussian_vec(&mut rng, n * d, 0.3)).unwrap()
    }

    #[test]
    fn encoding_is_unit_and_deterministic() {
        for variant in [EncoderVariant::LinearPool, EncoderVariant::AttentionBlock] {
            let enc = FrozenTextEncoder::new(variant, 8, 12, 1.0, 3).unwrap();
            let again = FrozenTextEncoder::new(variant, 8, 12, 1.0, 3).unwrap();
            assert_eq!(enc.fingerprint(), again.fingerprint());
            let x = tokens(5, 8, 1);
            let a = enc.encode(x.clone()).unwrap();
            let b = again.encode(x).unwrap();
            assert_eq!(a.feature, b.feature);
            assert!((numerics::norm(&a.feature) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let enc = FrozenTextEncoder::new(EncoderVariant::LinearPool, 8, 12, 1.0, 3).unwrap();
        assert!(enc.encode(Matrix::zeros(3, 7)).is_err());
    }

    #[test]
    fn token_gradients_match_finite_differences() {
        for variant in [EncoderVariant::LinearPool, EncoderVariant::AttentionBlock] {
            let enc = FrozenTextEncoder::new(variant, 6, 10, 1.5, 11).unwrap();
            let x = tokens(4, 6, 2);
            let mut wr = rng::stream(&[99]);
            let w = gaussian_vec(&mut wr, 10, 1.0);
            let out = enc.encode(x.clone()).unwrap();
            let analytic = enc.backward(&out, &w);
            let numeric = finite_diff_gradient(
                |flat| {
                    let t = Matrix::from_vec(4, 6, flat.to_vec()).unwrap();
                    numerics::dot(&enc.encode(t).unwrap().feature, &w)
                },
                x.as_slice(),
                1e-5,
            );
            let err = relative_error(analytic.as_slice(), &numeric, 1e-10);
            assert!(err < 1e-6, "{variant:?}: {err}");
        }
    }
}
