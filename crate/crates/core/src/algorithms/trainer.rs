use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{l1_anchor_penalty, orthogonality_penalty, squared_anchor_penalty};
use super::ot::plot_class_score;
use super::{
    project_prograd, sgd_momentum_step, trajectory_average, AlgoHyper, CommunicablePayload, MetaNet, Method, PromptParams, SgdConfig,
    SgdState, ShareMode, Tensor,
};
use crate::error::{config, domain, Error, Result};
use crate::numerics::{self, cosine_similarity, softmax_temp};
use crate::vlm::{FrozenVlm, PromptContext, Sample, TextBank, DEFAULT_INIT_STD};

/// Learnable prompt geometry: `prompts` sets of `len` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptShape {
    pub prompts: usize,
    pub len: usize,
}

impl Default for PromptShape {
    fn default() -> Self {
        Self { prompts: 1, len: 4 }
    }
}

/// State a client keeps between rounds.
#[derive(Debug, Clone, Default)]
pub struct ClientState {
    pub sgd: SgdState,
    /// Parameters that never leave the client.
    pub retained: Option<PromptContext>,
    /// Full local model after the latest local training.
    pub trained: Option<PromptParams>,
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub payload: PromptParams,
    pub mean_loss: f64,
    pub steps: usize,
    /// Dataset ids of every sample that entered a batch.
    pub seen: Vec<usize>,
}

/// Loss and gradient of one method on one batch.
#[derive(Clone, Copy)]
pub(crate) struct Objective<'a> {
    vlm: &'a FrozenVlm,
    method: Method,
    hyper: &'a AlgoHyper,
    classes: &'a [usize],
    text_refs: &'a [Vec<f64>],
    zs_refs: &'a [Vec<f64>],
}

impl Objective<'_> {
    fn evaluate(&self, params: &PromptParams, batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return domain("gradient of an empty batch");
        }
        match self.method {
            Method::CoCoOp => self.conditional(params, batch),
            Method::Plot | Method::FedOtp => self.transport(params, batch),
            Method::ProGrad => self.projected(params, batch),
            _ => self.ensemble(params, batch),
        }
    }

    /// Feature-level gradients of weighted CE and KL(zero-shot ∥ p) for the
    /// ensemble-mean head.
    fn head_grads(&self, bank: &TextBank, batch: &[Sample<'_>], ce_w: f64, kl_w: f64) -> Result<(f64, Vec<Vec<f64>>)> {
        let tau = self.vlm.tau();
        let (sets, classes) = (bank.sets(), bank.classes());
        let mut grads = vec![vec![0.0; self.vlm.config().d_feature]; sets * classes];
        let mut loss = 0.0;
        let inv_b = 1.0 / batch.len() as f64;
        for sample in batch {
            let (x, _) = numerics::normalize(sample.feature)?;
            let probs = softmax_temp(&ensemble_sims(bank, &x)?, tau)?;
            let mut g_sims = vec![0.0; classes];
            if ce_w != 0.0 {
                loss += ce_w * numerics::cross_entropy(&probs, sample.label)?.loss * inv_b;
                numerics::axpy(ce_w, &numerics::cross_entropy_logit_grad(&probs, sample.label, tau), &mut g_sims);
            }
            if kl_w != 0.0 {
                let zs = zero_shot_probs(&x, self.zs_refs, tau)?;
                loss += kl_w * numerics::kl_divergence(&zs, &probs) * inv_b;
                numerics::axpy(kl_w, &numerics::kl_logit_grad(&zs, &probs, tau), &mut g_sims);
            }
            for s in 0..sets {
                for (j, g) in g_sims.iter().enumerate() {
                    numerics::axpy(g * inv_b / sets as f64, &x, &mut grads[s * classes + j]);
                }
            }
        }
        Ok((loss, grads))
    }

    fn ensemble(&self, params: &PromptParams, batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
        let bank = self.vlm.text_bank(&params.context, self.classes, None)?;
        let kl_w = if self.method == Method::Src { self.hyper.mu_logit } else { 0.0 };
        let (mut loss, mut grads) = self.head_grads(&bank, batch, 1.0, kl_w)?;
        loss += match self.method {
            Method::KgCoOp => squared_anchor_penalty(&bank, self.text_refs, self.hyper.lambda_kg, &mut grads),
            Method::Src => l1_anchor_penalty(&bank, self.text_refs, self.hyper.mu_text, &mut grads),
            Method::ProDa => orthogonality_penalty(&bank, self.hyper.lambda_orth, &mut grads),
            _ => 0.0,
        };
        Ok((loss, self.vlm.bank_backward(&bank, &grads).0))
    }

    fn projected(&self, params: &PromptParams, batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
        let bank = self.vlm.text_bank(&params.context, self.classes, None)?;
        let (loss, task) = self.head_grads(&bank, batch, 1.0, 0.0)?;
        let (_, general) = self.head_grads(&bank, batch, 0.0, 1.0)?;
        let g_task = self.vlm.bank_backward(&bank, &task).0;
        let g_general = self.vlm.bank_backward(&bank, &general).0;
        Ok((loss, project_prograd(&g_task, &g_general, self.hyper.lambda_pg)?))
    }

    fn conditional(&self, params: &PromptParams, batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
        let Some(meta) = params.meta_net.as_ref() else {
            return config("conditional prompts need a meta-net");
        };
        let ctx = &params.context;
        let inv_b = 1.0 / batch.len() as f64;
        let mut grad_ctx = vec![0.0; ctx.parameter_count()];
        let mut grad_meta = MetaNet::zeros(meta.d_image(), meta.hidden(), meta.d_token());
        let mut loss = 0.0;
        for sample in batch {
            let (x, _) = numerics::normalize(sample.feature)?;
            let (bias, cache) = meta.forward(&x);
            let bank = self.vlm.text_bank(ctx, self.classes, Some(&bias))?;
            let (l, grads) = self.head_grads(&bank, std::slice::from_ref(sample), 1.0, 0.0)?;
            loss += l * inv_b;
            let (gc, mut gb) = self.vlm.bank_backward(&bank, &grads);
            numerics::axpy(inv_b, &gc, &mut grad_ctx);
            numerics::scale(&mut gb, inv_b);
            meta.backward(&x, &cache, &gb, &mut grad_meta);
        }
        let grad =
            PromptParams { context: PromptContext::from_values(ctx.sets(), ctx.len(), ctx.dim(), grad_ctx)?, meta_net: Some(grad_meta) };
        Ok((loss, grad.flatten()))
    }

    /// Transport head. The plan is treated as a constant in the backward
    /// pass, so the class-score gradient is `Σ_i plan(i, k) · local_i`.
    fn transport(&self, params: &PromptParams, batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
        let tau = self.vlm.tau();
        let bank = self.vlm.text_bank(&params.context, self.classes, None)?;
        let (sets, classes) = (bank.sets(), bank.classes());
        let mut grads = vec![vec![0.0; self.vlm.config().d_feature]; sets * classes];
        let inv_b = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for sample in batch {
            let scores = self.transport_scores(&bank, sample)?;
            let logits: Vec<f64> = scores.iter().map(|s| s.logit).collect();
            let probs = softmax_temp(&logits, tau)?;
            loss += numerics::cross_entropy(&probs, sample.label)?.loss * inv_b;
            let g = numerics::cross_entropy_logit_grad(&probs, sample.label, tau);
            let locals = sample.locals.expect("checked by transport_scores");
            for (j, score) in scores.iter().enumerate() {
                for s in 0..sets {
                    for (i, loc) in locals.iter_rows().enumerate() {
                        numerics::axpy(g[j] * inv_b * score.plan.get(i, s), loc, &mut grads[s * classes + j]);
                    }
                }
            }
        }
        Ok((loss, self.vlm.bank_backward(&bank, &grads).0))
    }

    fn transport_scores(&self, bank: &TextBank, sample: &Sample<'_>) -> Result<Vec<super::OtScore>> {
        let Some(locals) = sample.locals else {
            return Err(Error::Data(format!("sample {} has no local features for transport scoring", sample.id)));
        };
        let relax = if self.method == Method::FedOtp { self.hyper.ot_relax } else { 1.0 };
        (0..bank.classes())
            .map(|j| {
                let prompts: Vec<&[f64]> = (0..bank.sets()).map(|s| bank.feature(s, j)).collect();
                plot_class_score(locals, &prompts, self.hyper.ot_epsilon, self.hyper.ot_iters, relax)
            })
            .collect()
    }
}

fn ensemble_sims(bank: &TextBank, x: &[f64]) -> Result<Vec<f64>> {
    let sets = bank.sets();
    let mut sims = vec![0.0; bank.classes()];
    for s in 0..sets {
        for (j, sim) in sims.iter_mut().enumerate() {
            *sim += cosine_similarity(x, bank.feature(s, j))? / sets as f64;
        }
    }
    Ok(sims)
}

fn zero_shot_probs(x: &[f64], refs: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
    let sims = refs.iter().map(|r| cosine_similarity(x, r)).collect::<Result<Vec<_>>>()?;
    softmax_temp(&sims, tau)
}

struct SgdRun {
    mean_loss: f64,
    steps: usize,
    seen: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn run_local_sgd<R: Rng + ?Sized>(
    obj: &Objective<'_>,
    full: &mut PromptParams,
    state: &mut SgdState,
    cfg: &SgdConfig,
    data: &[Sample<'_>],
    round: usize,
    total: usize,
    rng: &mut R,
) -> Result<SgdRun> {
    if data.is_empty() {
        return Err(Error::Data("client has no training samples".into()));
    }
    if cfg.batch_size == 0 {
        return config("batch size must be at least 1");
    }
    let window = obj.hyper.trajectory_window;
    let mut flat = full.flatten();
    let mut snapshots: Vec<Vec<f64>> = Vec::new();
    let mut run = SgdRun { mean_loss: 0.0, steps: 0, seen: Vec::new() };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| data[i]).collect();
            run.seen.extend(batch.iter().map(|s| s.id));
            let (loss, grad) = obj.evaluate(full, &batch)?;
            sgd_momentum_step(&mut flat, &grad, state, cfg, round, total)?;
            full.load_flat(&flat)?;
            run.mean_loss += loss;
            run.steps += 1;
        }
        if obj.method == Method::Src {
            snapshots.push(flat.clone());
            if snapshots.len() > window {
                snapshots.remove(0);
            }
        }
    }
    if !snapshots.is_empty() {
        flat = trajectory_average(&snapshots, window, obj.hyper.trajectory_sigma)?;
        full.load_flat(&flat)?;
    }
    if run.steps > 0 {
        run.mean_loss /= run.steps as f64;
    }
    Ok(run)
}

/// A configured local-training strategy for one task.
#[derive(Debug, Clone)]
pub struct LocalTrainer {
    vlm: Arc<FrozenVlm>,
    method: Method,
    hyper: AlgoHyper,
    sgd: SgdConfig,
    shape: PromptShape,
    share: ShareMode,
    classes: Vec<usize>,
    text_refs: Vec<Vec<f64>>,
    zs_refs: Vec<Vec<f64>>,
    initial: PromptParams,
}

impl LocalTrainer {
    /// `classes` are the global class ids, in label order, the task trains on.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        vlm: Arc<FrozenVlm>,
        method: Method,
        hyper: AlgoHyper,
        sgd: SgdConfig,
        shape: PromptShape,
        share: ShareMode,
        classes: Vec<usize>,
        init_seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        if classes.is_empty() {
            return config("a task needs at least one class");
        }
        if shape.prompts == 0 || shape.len == 0 {
            return config("prompt shape needs at least one set and one token");
        }
        let d_token = vlm.config().d_token;
        let initial = match method {
            Method::ZsClip => PromptParams { context: vlm.handcrafted().clone(), meta_net: None },
            _ => PromptParams {
                context: PromptContext::random(shape.prompts * method.set_factor(), shape.len, d_token, DEFAULT_INIT_STD, init_seed)?,
                meta_net: (method == Method::CoCoOp)
                    .then(|| MetaNet::random(vlm.config().d_feature, hyper.meta_hidden, d_token, init_seed)),
            },
        };
        let templates = if method == Method::Src { hyper.src_templates } else { 1 };
        let text_refs = vlm.reference_features(templates, &classes)?;
        let zs_refs = vlm.reference_features(1, &classes)?;
        Ok(Self { vlm, method, hyper, sgd, shape, share, classes, text_refs, zs_refs, initial })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn vlm(&self) -> &FrozenVlm {
        &self.vlm
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn sgd(&self) -> &SgdConfig {
        &self.sgd
    }

    pub fn shape(&self) -> PromptShape {
        self.shape
    }

    pub fn hyper(&self) -> &AlgoHyper {
        &self.hyper
    }

    fn keeps_local_half(&self) -> bool {
        self.method == Method::FedOtp && self.share == ShareMode::Personalized
    }

    pub(crate) fn objective(&self) -> Objective<'_> {
        Objective {
            vlm: &self.vlm,
            method: self.method,
            hyper: &self.hyper,
            classes: &self.classes,
            text_refs: &self.text_refs,
            zs_refs: &self.zs_refs,
        }
    }

    /// Server-side parameters before the first round.
    pub fn initial_global(&self) -> PromptParams {
        self.split(&self.initial).expect("initial parameters have the declared shape").0
    }

    /// Scalars in one direction of one client exchange; constant across rounds.
    pub fn payload_scalars(&self) -> usize {
        if self.method == Method::ZsClip {
            return 0;
        }
        self.initial_global().parameter_count()
    }

    pub fn payload(&self, params: &PromptParams) -> CommunicablePayload {
        to_payload(params)
    }

    /// Full local model from the server parameters and client-held state.
    pub fn expand(&self, global: &PromptParams, state: &ClientState) -> Result<PromptParams> {
        if !self.keeps_local_half() {
            return Ok(global.clone());
        }
        let n = self.shape.prompts;
        let local = match &state.retained {
            Some(local) => local.clone(),
            None => self.initial.context.select(n..2 * n)?,
        };
        Ok(PromptParams { context: global.context.concat(&local)?, meta_net: None })
    }

    fn split(&self, full: &PromptParams) -> Result<(PromptParams, Option<PromptContext>)> {
        if !self.keeps_local_half() {
            return Ok((full.clone(), None));
        }
        let n = self.shape.prompts;
        let global = PromptParams { context: full.context.select(0..n)?, meta_net: None };
        Ok((global, Some(full.context.select(n..2 * n)?)))
    }

    /// Model a client would predict with: its post-training parameters when
    /// it has trained, otherwise the expanded server parameters.
    pub fn client_model(&self, global: &PromptParams, state: &ClientState) -> Result<PromptParams> {
        match &state.trained {
            Some(p) => Ok(p.clone()),
            None => self.expand(global, state),
        }
    }

    /// Runs `local_epochs` of batched SGD from `global` on `data`.
    pub fn train<R: Rng + ?Sized>(
        &self,
        global: &PromptParams,
        state: &mut ClientState,
        data: &[Sample<'_>],
        round: usize,
        total: usize,
        rng: &mut R,
    ) -> Result<LocalOutcome> {
        if !self.method.is_trained() {
            return config("zero-shot baseline has no local training");
        }
        let mut full = self.expand(global, state)?;
        let run = run_local_sgd(&self.objective(), &mut full, &mut state.sgd, &self.sgd, data, round, total, rng)?;
        let (payload, retained) = self.split(&full)?;
        state.retained = retained;
        state.trained = Some(full);
        Ok(LocalOutcome { payload, mean_loss: run.mean_loss, steps: run.steps, seen: run.seen })
    }

    /// Loss and flat gradient of the method's objective on one batch.
    pub fn loss_and_grad(&self, params: &PromptParams, batch: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
        self.objective().evaluate(params, batch)
    }

    /// Class scorer over `classes` (which may differ from the training classes).
    pub fn scorer<'a>(&'a self, params: &'a PromptParams, classes: &'a [usize]) -> Result<Scorer<'a>> {
        let bank = match self.method {
            Method::CoCoOp => None,
            _ => Some(self.vlm.text_bank(&params.context, classes, None)?),
        };
        let obj = Objective { classes, ..self.objective() };
        Ok(Scorer { obj, params, bank })
    }
}

fn to_payload(params: &PromptParams) -> CommunicablePayload {
    let ctx = &params.context;
    let mut tensors = vec![Tensor { name: "context".into(), shape: vec![ctx.sets(), ctx.len(), ctx.dim()], data: ctx.values().to_vec() }];
    if let Some(m) = &params.meta_net {
        tensors.push(Tensor { name: "meta.w1".into(), shape: vec![m.hidden(), m.d_image()], data: m.w1.as_slice().to_vec() });
        tensors.push(Tensor { name: "meta.b1".into(), shape: vec![m.hidden()], data: m.b1.clone() });
        tensors.push(Tensor { name: "meta.w2".into(), shape: vec![m.d_token(), m.hidden()], data: m.w2.as_slice().to_vec() });
        tensors.push(Tensor { name: "meta.b2".into(), shape: vec![m.d_token()], data: m.b2.clone() });
    }
    CommunicablePayload::new(tensors)
}

/// Class scores of a fixed model.
pub struct Scorer<'a> {
    obj: Objective<'a>,
    params: &'a PromptParams,
    bank: Option<TextBank>,
}

impl Scorer<'_> {
    /// Pre-softmax class scores.
    pub fn scores(&self, sample: &Sample<'_>) -> Result<Vec<f64>> {
        let (x, _) = numerics::normalize(sample.feature)?;
        match &self.bank {
            Some(bank) if self.obj.method.needs_local_features() => {
                Ok(self.obj.transport_scores(bank, sample)?.into_iter().map(|s| s.logit).collect())
            }
            Some(bank) => ensemble_sims(bank, &x),
            None => {
                let meta = self.params.meta_net.as_ref().expect("conditional model carries a meta-net");
                let bias = meta.forward(&x).0;
                let bank = self.obj.vlm.text_bank(&self.params.context, self.obj.classes, Some(&bias))?;
                ensemble_sims(&bank, &x)
            }
        }
    }

    /// Arg-max class position (first on ties).
    pub fn predict(&self, sample: &Sample<'_>) -> Result<usize> {
        let scores = self.scores(sample)?;
        Ok(scores.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (j, s)| if *s > best.1 { (j, *s) } else { best }).0)
    }
}

/// Plain context optimization: CE-only SGD on the prompt context.
#[allow(clippy::too_many_arguments)]
pub fn local_train_promptfl<R: Rng + ?Sized>(
    vlm: &FrozenVlm,
    classes: &[usize],
    context: &PromptContext,
    data: &[Sample<'_>],
    sgd: &SgdConfig,
    state: &mut SgdState,
    round: usize,
    total: usize,
    rng: &mut R,
) -> Result<CommunicablePayload> {
    let hyper = AlgoHyper::default();
    let obj = Objective { vlm, method: Method::PromptFl, hyper: &hyper, classes, text_refs: &[], zs_refs: &[] };
    let mut full = PromptParams { context: context.clone(), meta_net: None };
    run_local_sgd(&obj, &mut full, state, sgd, data, round, total, rng)?;
    Ok(to_payload(&full))
}

fn context_grad(params: &PromptContext, flat: Vec<f64>) -> Result<PromptContext> {
    PromptContext::from_values(params.sets(), params.len(), params.dim(), flat)
}

/// CE plus `λ · mean |t_j − t_j^hand|²` over sets and classes.
pub fn loss_kgcoop(
    vlm: &FrozenVlm,
    context: &PromptContext,
    batch: &[Sample<'_>],
    classes: &[usize],
    handcrafted: &[Vec<f64>],
    lambda_kg: f64,
) -> Result<(f64, PromptContext)> {
    if !(lambda_kg >= 0.0) {
        return config("lambda_kg must be non-negative");
    }
    let hyper = AlgoHyper { lambda_kg, ..AlgoHyper::default() };
    let obj = Objective { vlm, method: Method::KgCoOp, hyper: &hyper, classes, text_refs: handcrafted, zs_refs: &[] };
    let params = PromptParams { context: context.clone(), meta_net: None };
    let (loss, g) = obj.evaluate(&params, batch)?;
    Ok((loss, context_grad(context, g)?))
}

/// CE on the set-averaged scores plus the pairwise orthogonality penalty.
pub fn loss_proda(
    vlm: &FrozenVlm,
    context: &PromptContext,
    batch: &[Sample<'_>],
    classes: &[usize],
    lambda_orth: f64,
) -> Result<(f64, PromptContext)> {
    if context.sets() < 2 {
        return config(format!("distribution ensemble needs at least 2 prompt sets, got {}", context.sets()));
    }
    let hyper = AlgoHyper { lambda_orth, ..AlgoHyper::default() };
    let obj = Objective { vlm, method: Method::ProDa, hyper: &hyper, classes, text_refs: &[], zs_refs: &[] };
    let params = PromptParams { context: context.clone(), meta_net: None };
    let (loss, g) = obj.evaluate(&params, batch)?;
    Ok((loss, context_grad(context, g)?))
}

/// CE + `μ_text · mean |t_j − r_j|₁ + μ_logit · KL(p_zs ∥ p)`, where the
/// zero-shot predictions use the same frozen references.
pub fn loss_src(
    vlm: &FrozenVlm,
    context: &PromptContext,
    batch: &[Sample<'_>],
    classes: &[usize],
    refs: &[Vec<f64>],
    mu_text: f64,
    mu_logit: f64,
) -> Result<(f64, PromptContext)> {
    if !(mu_text >= 0.0 && mu_logit >= 0.0) {
        return config("SRC weights must be non-negative");
    }
    let hyper = AlgoHyper { mu_text, mu_logit, ..AlgoHyper::default() };
    let obj = Objective { vlm, method: Method::Src, hyper: &hyper, classes, text_refs: refs, zs_refs: refs };
    let params = PromptParams { context: context.clone(), meta_net: None };
    let (loss, g) = obj.evaluate(&params, batch)?;
    Ok((loss, context_grad(context, g)?))
}

/// Joint local training of `[global; local]` prompts under unbalanced
/// transport. Returns the communicated payload and the local prompts.
#[allow(clippy::too_many_arguments)]
pub fn fedotp_local_update<R: Rng + ?Sized>(
    trainer: &LocalTrainer,
    global: &PromptContext,
    local: &PromptContext,
    data: &[Sample<'_>],
    state: &mut SgdState,
    round: usize,
    total: usize,
    rng: &mut R,
) -> Result<(CommunicablePayload, PromptContext)> {
    if trainer.method != Method::FedOtp {
        return config("fedotp_local_update needs a FedOTP trainer");
    }
    if global.sets() != local.sets() {
        return config(format!("global/local prompt sets must pair up, got {} and {}", global.sets(), local.sets()));
    }
    let n = global.sets();
    let mut full = PromptParams { context: global.concat(local)?, meta_net: None };
    run_local_sgd(&trainer.objective(), &mut full, state, &trainer.sgd, data, round, total, rng)?;
    let kept = full.context.select(n..2 * n)?;
    let sent = match trainer.share {
        ShareMode::Personalized => full.context.select(0..n)?,
        ShareMode::Global => full.context.clone(),
    };
    Ok((to_payload(&PromptParams { context: sent, meta_net: None }), kept))
}
