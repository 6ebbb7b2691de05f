//! Frozen vision-language surrogate.
//!
//! The text side maps `[context tokens; class tokens]` through a frozen
//! encoder to a unit feature; images arrive as precomputed unit features.
//! Only prompt contexts (and algorithm-owned networks) ever receive
//! gradients.

mod encoder;
mod features;
mod head;
mod prompt;
mod vocab;

use serde::{Deserialize, Serialize};

pub use encoder::{EncoderVariant, FrozenTextEncoder, TextEncoding};
pub use features::{synth_local_features, Sample};
pub use head::{predict, prompt_gradients};
pub use prompt::{build_handcrafted_context, PromptContext, DEFAULT_INIT_STD, HANDCRAFTED_LEN};
pub use vocab::ClassVocabulary;

use crate::error::{config, Result};
use crate::numerics;
use crate::rng::{self, gaussian_vec, tags};

/// Shape and seeding of the frozen surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VlmConfig {
    pub variant: EncoderVariant,
    pub d_token: usize,
    /// Width of the shared image/text feature space.
    pub d_feature: usize,
    pub class_tokens: usize,
    pub tau: f64,
    /// Scale of frozen token embeddings (class names, templates).
    pub token_std: f64,
    pub encoder_gain: f64,
    /// Distance between the hand-crafted template and the context the
    /// classes were fitted under; controls how far zero-shot is from optimal.
    pub zero_shot_gap: f64,
    pub fit_iterations: usize,
    pub seed: u64,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            variant: EncoderVariant::LinearPool,
            d_token: 512,
            d_feature: 1024,
            class_tokens: 1,
            tau: 0.07,
            token_std: 0.05,
            encoder_gain: 1.0,
            zero_shot_gap: 1.0,
            fit_iterations: 300,
            seed: 0,
        }
    }
}

/// Encoder, vocabulary and templates; immutable once built.
#[derive(Debug, Clone)]
pub struct FrozenVlm {
    config: VlmConfig,
    encoder: FrozenTextEncoder,
    vocab: ClassVocabulary,
    handcrafted: PromptContext,
    anchor: PromptContext,
}

/// Text features for every (prompt set, class) pair of one context.
#[derive(Debug, Clone)]
pub struct TextBank {
    sets: usize,
    classes: usize,
    context_len: usize,
    encodings: Vec<TextEncoding>,
}

impl TextBank {
    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature(&self, set: usize, class: usize) -> &[f64] {
        &self.encodings[set * self.classes + class].feature
    }
}

impl FrozenVlm {
    /// Surrogate with seeded class embeddings and no class knowledge.
    pub fn new(config: VlmConfig, classes: usize) -> Result<Self> {
        if !(config.tau > 0.0) {
            return crate::error::config(format!("tau must be positive, got {}", config.tau));
        }
        let encoder = FrozenTextEncoder::new(config.variant, config.d_token, config.d_feature, config.encoder_gain, config.seed)?;
        let vocab = ClassVocabulary::random(config.seed, classes, config.class_tokens, config.d_token, config.token_std)?;
        let handcrafted = build_handcrafted_context(config.seed, HANDCRAFTED_LEN, config.d_token, config.token_std)?;
        let mut rng = rng::stream(&[tags::MODEL, 0x414e43, config.seed]);
        let offset = gaussian_vec(&mut rng, HANDCRAFTED_LEN * config.d_token, config.token_std * config.zero_shot_gap);
        let anchor_values = handcrafted.values().iter().zip(&offset).map(|(a, b)| a + b).collect();
        let anchor = PromptContext::from_values(1, HANDCRAFTED_LEN, config.d_token, anchor_values)?;
        Ok(Self { config, encoder, vocab, handcrafted, anchor })
    }

    /// Surrogate whose class embeddings are fitted so that class `j` encodes
    /// near `targets[j]` under the anchor context.
    pub fn aligned(config: VlmConfig, targets: &[Vec<f64>]) -> Result<Self> {
        let mut vlm = Self::new(config, targets.len())?;
        let step = 0.2 * vlm.config.token_std;
        let iterations = vlm.config.fit_iterations;
        vlm.vocab.fit_to_targets(&vlm.encoder, &vlm.anchor, targets, iterations, step)?;
        Ok(vlm)
    }

    pub fn config(&self) -> &VlmConfig {
        &self.config
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    pub fn encoder(&self) -> &FrozenTextEncoder {
        &self.encoder
    }

    pub fn vocabulary(&self) -> &ClassVocabulary {
        &self.vocab
    }

    pub fn num_classes(&self) -> usize {
        self.vocab.len()
    }

    pub fn handcrafted(&self) -> &PromptContext {
        &self.handcrafted
    }

    pub fn anchor(&self) -> &PromptContext {
        &self.anchor
    }

    /// Hash over encoder weights and class embeddings.
    pub fn fingerprint(&self) -> u64 {
        rng::derive_seed(&[self.encoder.fingerprint(), self.vocab.fingerprint()])
    }

    /// Additional template `i` (template 0 is the primary hand-crafted one).
    pub fn template(&self, i: usize) -> Result<PromptContext> {
        if i == 0 {
            return Ok(self.handcrafted.clone());
        }
        let seed = rng::derive_seed(&[self.config.seed, i as u64]);
        build_handcrafted_context(seed, HANDCRAFTED_LEN, self.config.d_token, self.config.token_std)
    }

    /// Encodes prompt set `set` of `context` followed by class `class`.
    pub fn encode_text(&self, context: &PromptContext, set: usize, class: usize, bias: Option<&[f64]>) -> Result<TextEncoding> {
        if context.dim() != self.config.d_token {
            return config(format!("context token width {} differs from encoder width {}", context.dim(), self.config.d_token));
        }
        if class >= self.vocab.len() || set >= context.sets() {
            return config(format!("class {class} / prompt set {set} out of range"));
        }
        let tokens = vocab::stack(context.set(set), context.len(), bias, self.vocab.embedding(class))?;
        self.encoder.encode(tokens)
    }

    pub fn text_bank(&self, context: &PromptContext, classes: &[usize], bias: Option<&[f64]>) -> Result<TextBank> {
        let mut encodings = Vec::with_capacity(context.sets() * classes.len());
        for s in 0..context.sets() {
            for &c in classes {
                encodings.push(self.encode_text(context, s, c, bias)?);
            }
        }
        Ok(TextBank { sets: context.sets(), classes: classes.len(), context_len: context.len(), encodings })
    }

    /// Pulls per-feature gradients back to the context tokens.
    ///
    /// Returns the context gradient (same layout as the context values) and
    /// the gradient of a per-token bias shared by every context row.
    pub fn bank_backward(&self, bank: &TextBank, grads: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let d = self.config.d_token;
        let per_set = bank.context_len * d;
        let mut grad_ctx = vec![0.0; bank.sets * per_set];
        let mut grad_bias = vec![0.0; d];
        for (idx, (enc, g)) in bank.encodings.iter().zip(grads).enumerate() {
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let s = idx / bank.classes;
            let tok = self.encoder.backward(enc, g);
            let ctx_part = &tok.as_slice()[..per_set];
            numerics::axpy(1.0, ctx_part, &mut grad_ctx[s * per_set..(s + 1) * per_set]);
            for row in ctx_part.chunks(d) {
                numerics::axpy(1.0, row, &mut grad_bias);
            }
        }
        (grad_ctx, grad_bias)
    }

    /// Unit text features averaged over `templates` hand-crafted contexts.
    pub fn reference_features(&self, templates: usize, classes: &[usize]) -> Result<Vec<Vec<f64>>> {
        if templates == 0 {
            return config("reference features need at least one template");
        }
        let mut acc = vec![vec![0.0; self.config.d_feature]; classes.len()];
        for i in 0..templates {
            let ctx = self.template(i)?;
            for (slot, &c) in acc.iter_mut().zip(classes) {
                let enc = self.encode_text(&ctx, 0, c, None)?;
                numerics::axpy(1.0, &enc.feature, slot);
            }
        }
        if templates == 1 {
            return Ok(acc);
        }
        acc.iter().map(|v| numerics::normalize(v).map(|(u, _)| u)).collect()
    }
}
