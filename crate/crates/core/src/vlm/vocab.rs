use crate::error::{config, Result};
use crate::numerics::{self, Matrix};
use crate::rng::{self, gaussian_vec, tags};

use super::encoder::FrozenTextEncoder;
use super::prompt::PromptContext;

/// Frozen per-class name embeddings, appended after the context tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassVocabulary {
    names: Vec<String>,
    embeddings: Vec<Matrix>,
}

impl ClassVocabulary {
    /// Seeded embeddings; class `j` depends only on `(seed, j)`.
    pub fn random(seed: u64, classes: usize, tokens: usize, d_token: usize, std: f64) -> Result<Self> {
        if classes == 0 || tokens == 0 {
            return config("vocabulary needs at least one class and one token per class");
        }
        let embeddings = (0..classes)
            .map(|j| {
                let mut rng = rng::stream(&[tags::MODEL, 0x564f43, seed, j as u64]);
                Matrix::from_vec(tokens, d_token, gaussian_vec(&mut rng, tokens * d_token, std))
            })
            .collect::<Result<Vec<_>>>()?;
        let names = (0..classes).map(|j| format!("class_{j}")).collect();
        Ok(Self { names, embeddings })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn tokens_per_class(&self) -> usize {
        self.embeddings.first().map_or(0, Matrix::rows)
    }

    pub fn embedding(&self, class: usize) -> &Matrix {
        &self.embeddings[class]
    }

    pub fn fingerprint(&self) -> u64 {
        let parts: Vec<u64> = self.embeddings.iter().flat_map(|m| m.as_slice().iter().map(|v| v.to_bits())).collect();
        rng::derive_seed(&parts)
    }

    /// Adjusts the class embeddings so that `anchor` followed by class `j`
    /// encodes close to `targets[j]`.
    ///
    /// This is the surrogate's "pretraining": it gives the frozen model
    /// knowledge of the classes present in the image feature space. It runs
    /// once at construction and never during prompt learning.
    pub fn fit_to_targets(
        &mut self,
        encoder: &FrozenTextEncoder,
        anchor: &PromptContext,
        targets: &[Vec<f64>],
        iterations: usize,
        step: f64,
    ) -> Result<()> {
        if targets.len() != self.len() {
            return config(format!("{} targets for {} classes", targets.len(), self.len()));
        }
        let ctx_rows = anchor.len();
        for (emb, target) in self.embeddings.iter_mut().zip(targets) {
            if target.len() != encoder.d_feature() {
                return config(format!("target width {} differs from text feature width {}", target.len(), encoder.d_feature()));
            }
            let (target, _) = numerics::normalize(target)?;
            // Adam on 1 - cos(feature, target).
            let n = emb.as_slice().len();
            let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
            let (b1, b2) = (0.9f64, 0.999f64);
            for it in 1..=iterations {
                let tokens = stack(anchor.set(0), ctx_rows, None, emb)?;
                let out = encoder.encode(tokens)?;
                let grad_feature: Vec<f64> = target.iter().map(|t| -t).collect();
                let grad = encoder.backward(&out, &grad_feature);
                let g = &grad.as_slice()[ctx_rows * emb.cols()..];
                let (c1, c2) = (1.0 - b1.powi(it as i32), 1.0 - b2.powi(it as i32));
                for (k, p) in emb.as_mut_slice().iter_mut().enumerate() {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    *p -= step * (m[k] / c1) / ((v[k] / c2).sqrt() + 1e-12);
                }
            }
        }
        Ok(())
    }
}

/// Stacks `context` rows (each shifted by `bias`) on top of `class_tokens`.
pub(crate) fn stack(context: &[f64], rows: usize, bias: Option<&[f64]>, class_tokens: &Matrix) -> Result<Matrix> {
    let d = class_tokens.cols();
    if context.len() != rows * d {
        return config(format!("context of {} values is not {rows} x {d}", context.len()));
    }
    let mut data = Vec::with_capacity((rows + class_tokens.rows()) * d);
    match bias {
        None => data.extend_from_slice(context),
        Some(b) => {
            if b.len() != d {
                return config(format!("token bias of width {} for tokens of width {d}", b.len()));
            }
            for row in context.chunks(d) {
                data.extend(row.iter().zip(b).map(|(x, y)| x + y));
            }
        }
    }
    data.extend_from_slice(class_tokens.as_slice());
    Matrix::from_vec(rows + class_tokens.rows(), d, data)
}
