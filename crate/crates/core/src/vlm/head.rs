use crate::error::{domain, Result};
use crate::numerics::{self, cosine_similarity, softmax_temp};

use super::{FrozenVlm, PromptContext, Sample};

/// Class probabilities: softmax of cosine similarities at temperature `tau`.
pub fn predict(image: &[f64], text_features: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
    if text_features.is_empty() {
        return domain("prediction over an empty class list");
    }
    let sims = text_features.iter().map(|t| cosine_similarity(image, t)).collect::<Result<Vec<_>>>()?;
    softmax_temp(&sims, tau)
}

/// Mean cross-entropy over `batch` and its exact gradient with respect to
/// the context tokens.
///
/// With several prompt sets the class score is the mean cosine over sets.
/// `classes` lists the global class ids in label order.
pub fn prompt_gradients(vlm: &FrozenVlm, context: &PromptContext, batch: &[Sample<'_>], classes: &[usize]) -> Result<(PromptContext, f64)> {
    if batch.is_empty() {
        return domain("gradient of an empty batch");
    }
    let tau = vlm.tau();
    let bank = vlm.text_bank(context, classes, None)?;
    let sets = bank.sets();
    let mut grads = vec![vec![0.0; vlm.config().d_feature]; sets * classes.len()];
    let mut loss = 0.0;
    let inv_b = 1.0 / batch.len() as f64;
    for sample in batch {
        let (x, _) = numerics::normalize(sample.feature)?;
        let mut sims = vec![0.0; classes.len()];
        for s in 0..sets {
            for (j, sim) in sims.iter_mut().enumerate() {
                *sim += cosine_similarity(&x, bank.feature(s, j))? / sets as f64;
            }
        }
        let probs = softmax_temp(&sims, tau)?;
        loss += numerics::cross_entropy(&probs, sample.label)?.loss * inv_b;
        let g_sims = numerics::cross_entropy_logit_grad(&probs, sample.label, tau);
        for s in 0..sets {
            for (j, g) in g_sims.iter().enumerate() {
                numerics::axpy(g * inv_b / sets as f64, &x, &mut grads[s * classes.len() + j]);
            }
        }
    }
    let (grad_ctx, _) = vlm.bank_backward(&bank, &grads);
    Ok((PromptContext::from_values(context.sets(), context.len(), context.dim(), grad_ctx)?, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, relative_error};
    use crate::rng::{self, gaussian_vec};
    use crate::vlm::{EncoderVariant, VlmConfig};

    fn unit(seed: u64, d: usize) -> Vec<f64> {
        numerics::normalize(&gaussian_vec(&mut rng::stream(&[seed]), d, 1.0)).unwrap().0
    }

    #[test]
    fn predict_cases() {
        let a = unit(1, 4);
        let b = unit(2, 4);
        let img = numerics::normalize(&a.iter().zip(&b).map(|(x, y)| x + y).collect::<Vec<_>>()).unwrap().0;
        let p = predict(&img, &[a.clone(), b.clone()], 0.07).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        // sims [0.5, 0.3] at tau 0.1
        let e0 = vec![1.0, 0.0, 0.0];
        let t0 = vec![0.5, (0.75f64).sqrt(), 0.0];
        let t1 = vec![0.3, 0.0, (0.91f64).sqrt()];
        let p = predict(&e0, &[t0.clone(), t1.clone()], 0.1).unwrap();
        assert!((p[0] - 0.8808).abs() < 1e-4 && (p[1] - 0.1192).abs() < 1e-4);
        let q = predict(&e0, &[t1, t0], 0.1).unwrap();
        assert_eq!((q[0], q[1]), (p[1], p[0]));
        assert!(predict(&e0, &[], 0.1).is_err());
    }

    #[test]
    fn predict_equals_manual_composition() {
        let img = unit(5, 6);
        let texts: Vec<Vec<f64>> = (10..14).map(|s| unit(s, 6)).collect();
        let manual: Vec<f64> = texts.iter().map(|t| cosine_similarity(&img, t).unwrap()).collect();
        assert_eq!(predict(&img, &texts, 0.3).unwrap(), softmax_temp(&manual, 0.3).unwrap());
    }

    fn world(variant: EncoderVariant) -> FrozenVlm {
        let cfg = VlmConfig { variant, d_token: 16, d_feature: 16, tau: 0.5, ..VlmConfig::default() };
        FrozenVlm::new(cfg, 3).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for variant in [EncoderVariant::LinearPool, EncoderVariant::AttentionBlock] {
            let vlm = world(variant);
            let ctx = PromptContext::random(1, 4, 16, 0.3, 2).unwrap();
            let feats: Vec<Vec<f64>> = (0..5).map(|s| unit(30 + s, 16)).collect();
            let batch: Vec<Sample> =
                feats.iter().enumerate().map(|(i, f)| Sample { id: i, feature: f, locals: None, label: i % 3 }).collect();
            let (g, _) = prompt_gradients(&vlm, &ctx, &batch, &[0, 1, 2]).unwrap();
            let numeric = finite_diff_gradient(
                |v| {
                    let c = PromptContext::from_values(1, 4, 16, v.to_vec()).unwrap();
                    prompt_gradients(&vlm, &c, &batch, &[0, 1, 2]).unwrap().1
                },
                ctx.values(),
                1e-5,
            );
            assert!(relative_error(g.values(), &numeric, 1e-10) < 1e-4);
        }
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let vlm = world(EncoderVariant::LinearPool);
        let ctx = PromptContext::random(1, 4, 16, 0.3, 2).unwrap();
        let feats: Vec<Vec<f64>> = (0..3).map(|s| unit(50 + s, 16)).collect();
        let batch: Vec<Sample> = feats.iter().enumerate().map(|(i, f)| Sample { id: i, feature: f, locals: None, label: i }).collect();
        let doubled: Vec<Sample> = batch.iter().chain(batch.iter()).copied().collect();
        let (g1, l1) = prompt_gradients(&vlm, &ctx, &batch, &[0, 1, 2]).unwrap();
        let (g2, l2) = prompt_gradients(&vlm, &ctx, &doubled, &[0, 1, 2]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!(relative_error(g1.values(), g2.values(), 1e-12) < 1e-12);
    }

    #[test]
    fn confident_batch_has_near_zero_gradient() {
        let cfg = VlmConfig { d_token: 16, d_feature: 16, tau: 1e-5, ..VlmConfig::default() };
        let vlm = FrozenVlm::new(cfg, 2).unwrap();
        let ctx = PromptContext::random(1, 4, 16, 0.3, 2).unwrap();
        let t0 = vlm.encode_text(&ctx, 0, 0, None).unwrap().feature;
        let batch = [Sample { id: 0, feature: &t0, locals: None, label: 0 }];
        let (g, loss) = prompt_gradients(&vlm, &ctx, &batch, &[0, 1]).unwrap();
        assert!(loss < 1e-12);
        assert!(numerics::norm(g.values()) < 1e-9);
    }
}
