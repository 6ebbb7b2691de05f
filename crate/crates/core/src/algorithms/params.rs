use crate::error::{config, Result};
use crate::numerics::{self, Matrix};
use crate::rng::{self, tags};
use crate::vlm::PromptContext;

use rand::Rng;

/// Conditional-prompt network: `d_image → hidden → d_token` with ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaNet {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Hidden activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MetaNetCache {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl MetaNet {
    pub fn zeros(d_image: usize, hidden: usize, d_token: usize) -> Self {
        Self { w1: Matrix::zeros(hidden, d_image), b1: vec![0.0; hidden], w2: Matrix::zeros(d_token, hidden), b2: vec![0.0; d_token] }
    }

    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn random(d_image: usize, hidden: usize, d_token: usize, seed: u64) -> Self {
        let mut rng = rng::stream(&[tags::INIT, 0x4d455441, seed]);
        let mut net = Self::zeros(d_image, hidden, d_token);
        let b1 = 1.0 / (d_image as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        for v in net.w1.as_mut_slice().iter_mut().chain(net.b1.iter_mut()) {
            *v = rng.random_range(-b1..b1);
        }
        for v in net.w2.as_mut_slice().iter_mut().chain(net.b2.iter_mut()) {
            *v = rng.random_range(-b2..b2);
        }
        net
    }

    pub fn d_image(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_token(&self) -> usize {
        self.w2.rows()
    }

    pub fn parameter_count(&self) -> usize {
        meta_net_parameter_count(self.d_image(), self.hidden(), self.d_token())
    }

    /// Per-token bias for image feature `x`.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MetaNetCache) {
        let hidden_pre: Vec<f64> = self.w1.matvec(x).iter().zip(&self.b1).map(|(a, b)| a + b).collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
        let out = self.w2.matvec(&hidden).iter().zip(&self.b2).map(|(a, b)| a + b).collect();
        (out, MetaNetCache { hidden_pre, hidden })
    }

    /// Adds the parameter gradient for `∂L/∂bias` into `grad`.
    pub fn backward(&self, x: &[f64], cache: &MetaNetCache, grad_out: &[f64], grad: &mut MetaNet) {
        for (r, g) in grad_out.iter().enumerate() {
            numerics::axpy(*g, &cache.hidden, grad.w2.row_mut(r));
            grad.b2[r] += g;
        }
        let grad_hidden = self.w2.matvec_t(grad_out);
        for (h, (gh, pre)) in grad_hidden.iter().zip(&cache.hidden_pre).enumerate() {
            if *pre > 0.0 {
                numerics::axpy(*gh, x, grad.w1.row_mut(h));
                grad.b1[h] += gh;
            }
        }
    }

    /// Smallest |pre-activation| for `x`; ReLU kinks sit at zero.
    pub fn kink_margin(&self, x: &[f64]) -> f64 {
        self.forward(x).1.hidden_pre.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
    }

    fn load(&mut self, flat: &[f64]) -> usize {
        let mut pos = 0;
        for dst in [self.w1.as_mut_slice(), &mut self.b1[..], self.w2.as_mut_slice(), &mut self.b2[..]] {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        }
        pos
    }
}

/// Scalars in a two-layer meta-net with biases.
pub fn meta_net_parameter_count(d_image: usize, hidden: usize, d_token: usize) -> usize {
    d_image * hidden + hidden + hidden * d_token + d_token
}

/// Per-token bias predicted by the meta-net for image feature `x`.
pub fn metanet_forward(net: &MetaNet, x: &[f64]) -> Vec<f64> {
    net.forward(x).0
}

/// All trainable state of one local model.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptParams {
    pub context: PromptContext,
    pub meta_net: Option<MetaNet>,
}

impl PromptParams {
    pub fn zeros_like(&self) -> Self {
        let context =
            PromptContext::zeros(self.context.sets(), self.context.len(), self.context.dim()).expect("shape taken from a valid context");
        let meta_net = self.meta_net.as_ref().map(|m| MetaNet::zeros(m.d_image(), m.hidden(), m.d_token()));
        Self { context, meta_net }
    }

    pub fn parameter_count(&self) -> usize {
        self.context.parameter_count() + self.meta_net.as_ref().map_or(0, MetaNet::parameter_count)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        out.extend_from_slice(self.context.values());
        if let Some(m) = &self.meta_net {
            m.flatten_into(&mut out);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return config(format!("{} values for {} parameters", flat.len(), self.parameter_count()));
        }
        let n = self.context.parameter_count();
        self.context.values_mut().copy_from_slice(&flat[..n]);
        if let Some(m) = &mut self.meta_net {
            m.load(&flat[n..]);
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.load_flat(flat)?;
        Ok(out)
    }
}
