//! Acceptance suite: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fedprompt_core::algorithms::{
    local_train_promptfl, project_prograd, sinkhorn, sinkhorn_unbalanced, AlgoHyper, ClientState, LocalTrainer, Method, PromptParams,
    PromptShape, SgdConfig, SgdState, ShareMode,
};
use fedprompt_core::data::{
    balanced_subsample, base_novel_split, dirichlet_partition, generate_synthetic_dataset, mean_label_entropy, SplitMode, SyntheticSpec,
};
use fedprompt_core::evaluation::{harmonic_mean, run_cell, superiority_indicator, PartitionConfig, ScenarioKind, ScenarioSpec, Setup};
use fedprompt_core::federation::{client_rng, dry_run_ledger, run_round, FederationConfig, Protocol, ServerState};
use fedprompt_core::numerics::{self, Matrix};
use fedprompt_core::rng::{self, gaussian_vec};
use fedprompt_core::vlm::{EncoderVariant, FrozenVlm, Sample, VlmConfig};
use rand::Rng;

// Tolerances.
const GRAD_REL_ERR: f64 = 1e-4;
const GRAD_INSTANCES: usize = 120;
const CENTRAL_TOL: f64 = 1e-12;
const LEARNING_MARGIN: f64 = 20.0;
const MARGINAL_TOL: f64 = 1e-6;
const BRUTE_FORCE_TOL: f64 = 1e-3;
const RELAX_TOL: f64 = 1e-9;
const REDUCTION_TOL: f64 = 1e-12;
const PROJECTION_TOL: f64 = 1e-12;
const HARMONIC_TOL: f64 = 0.1;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn trainer(vlm: &Arc<FrozenVlm>, method: Method, hyper: AlgoHyper, shape: PromptShape, classes: usize, seed: u64) -> LocalTrainer {
    LocalTrainer::new(vlm.clone(), method, hyper, SgdConfig::default(), shape, ShareMode::Global, (0..classes).collect(), seed)
        .expect("valid trainer")
}

fn criterion_1() -> Result<String, String> {
    let started = Instant::now();
    let vlm = Arc::new(ok(FrozenVlm::new(VlmConfig::default(), 10))?);
    let fed = FederationConfig::default();
    let chi = |method: Method, shape: PromptShape| -> Result<String, String> {
        let t = trainer(&vlm, method, AlgoHyper::default(), shape, 10, 0);
        Ok(format!("{:.2}", ok(dry_run_ledger(t.payload_scalars(), &fed, 0))?.millions()))
    };
    let base = PromptShape::default();
    let table8 = [
        (Method::PromptFl, "2.05"),
        (Method::Plot, "2.05"),
        (Method::ProGrad, "2.05"),
        (Method::Src, "2.05"),
        (Method::KgCoOp, "2.05"),
        (Method::FedOtp, "4.10"),
        (Method::ProDa, "4.10"),
        (Method::CoCoOp, "100.93"),
    ];
    for (m, want) in table8 {
        let got = chi(m, base)?;
        ensure(got == want, || format!("{m}: {got}M, expected {want}M"))?;
    }
    for (prompts, want) in [(1, "2.05"), (2, "4.10"), (4, "8.19")] {
        let got = chi(Method::PromptFl, PromptShape { prompts, ..base })?;
        ensure(got == want, || format!("promptfl m={prompts}: {got}M, expected {want}M"))?;
    }
    for (prompts, want) in [(1, "4.10"), (2, "8.19"), (4, "16.38")] {
        let got = chi(Method::FedOtp, PromptShape { prompts, ..base })?;
        ensure(got == want, || format!("fedotp m={prompts}: {got}M, expected {want}M"))?;
    }
    for (len, want) in [(4, "100.93"), (8, "102.98"), (16, "107.07")] {
        let got = chi(Method::CoCoOp, PromptShape { len, ..base })?;
        ensure(got == want, || format!("cocoop L={len}: {got}M, expected {want}M"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("cost columns and token sweep exact ({elapsed:.2?})"))
}

fn criterion_2() -> Result<String, String> {
    let pairs = [((88.2, 92.6), 90.3), ((19.6, 24.7), 21.8), ((59.5, 68.1), 63.5), ((77.2, 71.0), 73.9)];
    for ((b, n), want) in pairs {
        let h = ok(harmonic_mean(b, n))?;
        ensure((h - want).abs() <= HARMONIC_TOL, || format!("H({b}, {n}) = {h}, expected {want}"))?;
    }
    let promptfl = [91.5, 57.6, 22.8, 79.2, 62.0, 84.0, 89.4, 70.1];
    let fedotp = [91.8, 58.0, 21.9, 78.7, 62.8, 83.3, 89.1, 69.4];
    let kgcoop = [91.8, 58.2, 23.0, 79.4, 61.7, 83.9, 89.4, 70.4];
    let a = ok(superiority_indicator(&fedotp, &promptfl))?;
    let b = ok(superiority_indicator(&kgcoop, &promptfl))?;
    ensure(a == 3 && b == 5, || format!("superiority FedOTP={a}, Fed-KgCoOp={b}"))?;
    Ok("harmonic means within 0.1; # = 3 and 5".into())
}

fn unit(r: &mut impl Rng, d: usize) -> Vec<f64> {
    numerics::normalize(&gaussian_vec(r, d, 1.0)).unwrap().0
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = numerics::norm(a).max(numerics::norm(b)).max(1e-8);
    diff / scale
}

fn criterion_3() -> Result<String, String> {
    let started = Instant::now();
    let methods = [Method::PromptFl, Method::KgCoOp, Method::Src, Method::ProDa, Method::CoCoOp];
    let mut worst: f64 = 0.0;
    let mut covered = std::collections::BTreeSet::new();
    let mut done = 0;
    let mut attempt = 0u64;
    while done < GRAD_INSTANCES {
        attempt += 1;
        let mut r = rng::stream(&[0xfd, attempt]);
        let method = methods[done % methods.len()];
        let variant = if (done / methods.len()).is_multiple_of(2) { EncoderVariant::LinearPool } else { EncoderVariant::AttentionBlock };
        let classes = r.random_range(2..=5);
        let d_token = r.random_range(4..=16);
        let d_feature = r.random_range(4..=32);
        let cfg = VlmConfig {
            variant,
            d_token,
            d_feature,
            tau: r.random_range(0.1..1.0),
            encoder_gain: r.random_range(0.5..2.0),
            token_std: 0.3,
            seed: attempt,
            ..VlmConfig::default()
        };
        let vlm = Arc::new(ok(FrozenVlm::new(cfg, classes))?);
        let shape = PromptShape { prompts: r.random_range(1..=2), len: r.random_range(1..=3) };
        let hyper = AlgoHyper {
            lambda_kg: r.random_range(0.1..2.0),
            mu_text: r.random_range(0.1..2.0),
            mu_logit: r.random_range(0.1..2.0),
            lambda_orth: r.random_range(0.1..2.0),
            meta_hidden: r.random_range(2..=8),
            src_templates: r.random_range(1..=3),
            ..AlgoHyper::default()
        };
        let t = trainer(&vlm, method, hyper, shape, classes, attempt);
        let feats: Vec<Vec<f64>> = (0..r.random_range(1..=4)).map(|_| unit(&mut r, d_feature)).collect();
        let batch: Vec<Sample<'_>> =
            feats.iter().enumerate().map(|(i, f)| Sample { id: i, feature: f, locals: None, label: r.random_range(0..classes) }).collect();
        // Larger contexts so the loss is not flat.
        let mut params = t.initial_global();
        let scaled: Vec<f64> = params.flatten().iter().map(|v| v * 10.0).collect();
        params = ok(params.with_flat(&scaled))?;
        let h = 1e-6;
        if let Some(net) = &params.meta_net {
            if feats.iter().any(|x| net.kink_margin(x) < 1e3 * h) {
                continue;
            }
        }
        let (_, grad) = ok(t.loss_and_grad(&params, &batch))?;
        let flat = params.flatten();
        let mut fd = vec![0.0; flat.len()];
        for k in 0..flat.len() {
            let mut p = flat.clone();
            p[k] += h;
            let up = ok(t.loss_and_grad(&ok(params.with_flat(&p))?, &batch))?.0;
            p[k] -= 2.0 * h;
            let down = ok(t.loss_and_grad(&ok(params.with_flat(&p))?, &batch))?.0;
            fd[k] = (up - down) / (2.0 * h);
        }
        let e = rel_err(&grad, &fd);
        ensure(e < GRAD_REL_ERR, || format!("{method} {variant:?} C={classes} d={d_feature}: relative error {e:.2e}"))?;
        worst = worst.max(e);
        covered.insert(format!("{method}/{variant:?}"));
        done += 1;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{done} instances over {} method/encoder pairs, worst relative error {worst:.1e} ({elapsed:.1?})", covered.len()))
}

fn criterion_4() -> Result<String, String> {
    let spec = SyntheticSpec { classes: 4, dim: 16, per_class: 12, sigma: 0.1, seed: 4 };
    let ds = ok(generate_synthetic_dataset(&spec))?;
    let vlm_cfg = VlmConfig { d_token: 16, d_feature: 16, ..VlmConfig::default() };
    let vlm = Arc::new(ok(FrozenVlm::aligned(vlm_cfg, &ok(ds.class_means())?))?);
    let fed = FederationConfig { rounds: 10, ..FederationConfig::for_protocol(Protocol::Centralized) };
    let t = LocalTrainer::new(
        vlm.clone(),
        Method::PromptFl,
        AlgoHyper::default(),
        SgdConfig { lr: 0.05, ..SgdConfig::default() },
        PromptShape::default(),
        ShareMode::Global,
        (0..4).collect(),
        11,
    )
    .map_err(|e| e.to_string())?;
    let data = ds.samples();
    let clients = vec![data.clone()];
    let mut server = ServerState::new(t.initial_global());
    let mut states = vec![ClientState::default()];
    let mut ctx = t.initial_global().context;
    let mut sgd_state = SgdState::default();
    let seed = 5;
    let mut worst: f64 = 0.0;
    for round in 0..fed.rounds {
        ok(run_round(&mut server, &t, &clients, &mut states, &fed, seed))?;
        let payload = ok(local_train_promptfl(
            &vlm,
            t.classes(),
            &ctx,
            &data,
            t.sgd(),
            &mut sgd_state,
            round,
            fed.rounds,
            &mut client_rng(seed, 0, round),
        ))?;
        let values = payload.tensor("context").ok_or("payload lacks a context")?.data.clone();
        ctx = ok(fedprompt_core::vlm::PromptContext::from_values(ctx.sets(), ctx.len(), ctx.dim(), values))?;
        let diff = server.global.context.values().iter().zip(ctx.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
        ensure(diff < CENTRAL_TOL, || format!("round {round}: max difference {diff:e}"))?;
    }
    let moved = rel_err(server.global.context.values(), t.initial_global().context.values());
    ensure(moved > 1e-3, || "the prompt never moved".into())?;
    Ok(format!("10 rounds, max elementwise difference {worst:e}"))
}

fn desk_setup(seed_rounds: usize) -> Result<Setup, String> {
    let ds = ok(generate_synthetic_dataset(&SyntheticSpec { classes: 10, dim: 64, per_class: 50, sigma: 0.1, seed: 0 }))?;
    let vlm = VlmConfig { d_token: 64, d_feature: 64, encoder_gain: 10.0, zero_shot_gap: 60.0, ..VlmConfig::default() };
    let fed = FederationConfig { rounds: seed_rounds, ..FederationConfig::default() };
    let sgd = SgdConfig { lr: 0.2, ..SgdConfig::default() };
    let part = PartitionConfig { alpha: 0.1, ..PartitionConfig::default() };
    ok(Setup::new("synthetic", ds, vlm, PromptShape::default(), AlgoHyper::default(), sgd, fed, part))
}

fn criterion_5() -> Result<String, String> {
    let started = Instant::now();
    let setup = desk_setup(30)?;
    let spec = ScenarioSpec::new(ScenarioKind::Global);
    let mut lines = Vec::new();
    for seed in 0..3 {
        let zs = ok(run_cell(&setup, &spec, Method::ZsClip, seed))?.metrics[0].1;
        let pf = ok(run_cell(&setup, &spec, Method::PromptFl, seed))?.metrics[0].1;
        ensure(pf - zs >= LEARNING_MARGIN, || format!("seed {seed}: promptfl {pf:.1} vs zero-shot {zs:.1}"))?;
        lines.push(format!("{pf:.0} vs {zs:.0}"));
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("promptfl vs zero-shot per seed: {} ({elapsed:.1?})", lines.join(", ")))
}

fn criterion_6() -> Result<String, String> {
    let ds = ok(generate_synthetic_dataset(&SyntheticSpec { classes: 10, dim: 64, per_class: 50, sigma: 0.1, seed: 1 }))?;
    let alphas = [0.1, 1.0, 10.0, 100.0];
    let mut means = vec![0.0; alphas.len()];
    for seed in 0..10u64 {
        let pool = ok(balanced_subsample(&ds, 8, &mut rng::stream(&[0x6e, seed])))?;
        let mut ent = Vec::new();
        for (k, &alpha) in alphas.iter().enumerate() {
            let plan = ok(dirichlet_partition(pool.labels(), 10, 10, alpha, &mut rng::stream(&[0x6f, seed])))?;
            let e = mean_label_entropy(pool.labels(), 10, &plan);
            means[k] += e / 10.0;
            ent.push(e);
        }
        ensure(ent[0] < ent[3], || format!("seed {seed}: entropy {:.3} at 0.1 vs {:.3} at 100", ent[0], ent[3]))?;
    }
    ensure(means.windows(2).all(|w| w[0] < w[1]), || format!("mean entropies {means:?}"))?;
    Ok(format!("mean entropy {:.2} → {:.2} → {:.2} → {:.2}", means[0], means[1], means[2], means[3]))
}

fn criterion_7() -> Result<String, String> {
    let mut worst_marginal: f64 = 0.0;
    for case in 0..50u64 {
        let mut r = rng::stream(&[0x07, case]);
        let (m, n) = (r.random_range(1..=8), r.random_range(1..=8));
        let cost = ok(Matrix::from_vec(m, n, (0..m * n).map(|_| r.random_range(0.0..2.0)).collect()))?;
        let raw_a: Vec<f64> = (0..m).map(|_| r.random_range(0.1..1.0)).collect();
        let raw_b: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        let (sa, sb) = (raw_a.iter().sum::<f64>(), raw_b.iter().sum::<f64>());
        let a: Vec<f64> = raw_a.iter().map(|v| v / sa).collect();
        let b: Vec<f64> = raw_b.iter().map(|v| v / sb).collect();
        let plan = ok(sinkhorn(&cost, 0.1, 100, &a, &b))?;
        for (i, ai) in a.iter().enumerate() {
            let s: f64 = plan.row(i).iter().sum();
            worst_marginal = worst_marginal.max((s - ai).abs());
        }
        for (j, bj) in b.iter().enumerate() {
            let s: f64 = (0..m).map(|i| plan.get(i, j)).sum();
            worst_marginal = worst_marginal.max((s - bj).abs());
        }
        let ot: f64 = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| plan.get(i, j) * cost.get(i, j)).sum();
        let product: f64 = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| a[i] * b[j] * cost.get(i, j)).sum();
        ensure(ot <= product + 1e-12, || format!("case {case}: plan cost {ot} above product {product}"))?;
        let relaxed = ok(sinkhorn_unbalanced(&cost, 0.1, 100, &a, &b, 1.0))?;
        let gap = relaxed.as_slice().iter().zip(plan.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure(gap <= RELAX_TOL, || format!("case {case}: relax=1 differs by {gap:e}"))?;
    }
    ensure(worst_marginal <= MARGINAL_TOL, || format!("marginal error {worst_marginal:e}"))?;
    for case in 0..20u64 {
        let mut r = rng::stream(&[0x27, case]);
        let c: Vec<f64> = (0..4).map(|_| r.random_range(0.0..1.0)).collect();
        let (identity, swap) = (c[0] + c[3], c[1] + c[2]);
        if (identity - swap).abs() < 0.2 {
            continue;
        }
        let cost = ok(Matrix::from_vec(2, 2, c))?;
        let plan = ok(sinkhorn(&cost, 0.01, 1000, &[0.5, 0.5], &[0.5, 0.5]))?;
        let best = if identity < swap { [0.5, 0.0, 0.0, 0.5] } else { [0.0, 0.5, 0.5, 0.0] };
        let err = plan.as_slice().iter().zip(best).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure(err <= BRUTE_FORCE_TOL, || format!("2x2 case {case}: plan off by {err}"))?;
    }
    Ok(format!("max marginal error {worst_marginal:.1e}; cost bound, brute force and relax=1 hold"))
}

fn criterion_8() -> Result<String, String> {
    let spec = SyntheticSpec { classes: 5, dim: 12, per_class: 10, sigma: 0.2, seed: 8 };
    let ds = ok(generate_synthetic_dataset(&spec))?;
    let data = ds.samples();
    let mut worst: f64 = 0.0;
    for case in 0..10u64 {
        let cfg = VlmConfig {
            d_token: 12,
            d_feature: 12,
            variant: if case % 2 == 0 { EncoderVariant::LinearPool } else { EncoderVariant::AttentionBlock },
            seed: case,
            ..VlmConfig::default()
        };
        let vlm = Arc::new(ok(FrozenVlm::aligned(cfg, &ok(ds.class_means())?))?);
        let sgd = SgdConfig { lr: 0.05, batch_size: 8, local_epochs: 2, ..SgdConfig::default() };
        let make = |method, hyper| {
            LocalTrainer::new(vlm.clone(), method, hyper, sgd.clone(), PromptShape::default(), ShareMode::Global, (0..5).collect(), case)
        };
        let base = ok(make(Method::PromptFl, AlgoHyper::default()))?;
        let kg = ok(make(Method::KgCoOp, AlgoHyper { lambda_kg: 0.0, ..AlgoHyper::default() }))?;
        let src = ok(make(Method::Src, AlgoHyper { mu_text: 0.0, mu_logit: 0.0, trajectory_window: 1, ..AlgoHyper::default() }))?;
        let run = |t: &LocalTrainer| -> Result<PromptParams, String> {
            let mut state = ClientState::default();
            let g = t.initial_global();
            Ok(ok(t.train(&g, &mut state, &data, 0, 1, &mut client_rng(case, 0, 0)))?.payload)
        };
        let reference = run(&base)?;
        for (name, t) in [("kgcoop", &kg), ("src", &src)] {
            let got = run(t)?;
            let diff = got.context.values().iter().zip(reference.context.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(diff);
            ensure(diff <= REDUCTION_TOL, || format!("{name} case {case}: differs from promptfl by {diff:e}"))?;
        }
    }
    for case in 0..1000u64 {
        let mut r = rng::stream(&[0x08, case]);
        let n = r.random_range(1..=20);
        let g = gaussian_vec(&mut r, n, 1.0);
        let scale = r.random_range(0.01..10.0);
        let gg = gaussian_vec(&mut r, n, scale);
        let p = ok(project_prograd(&g, &gg, 1.0))?;
        let dot = numerics::dot(&p, &gg);
        ensure(dot >= -PROJECTION_TOL, || format!("case {case}: projected gradient dot {dot:e}"))?;
        if numerics::dot(&g, &gg) >= 0.0 {
            ensure(p == g, || format!("case {case}: non-conflicting gradient changed"))?;
        }
    }
    Ok(format!("reductions exact to {worst:.1e}; 1000 projections never conflict"))
}

fn criterion_9() -> Result<String, String> {
    let ds = ok(generate_synthetic_dataset(&SyntheticSpec { classes: 6, dim: 16, per_class: 20, sigma: 0.1, seed: 9 }))?;
    let vlm = VlmConfig { d_token: 16, d_feature: 16, encoder_gain: 10.0, zero_shot_gap: 60.0, ..VlmConfig::default() };
    let fed = FederationConfig { num_clients: 3, rounds: 3, ..FederationConfig::default() };
    let sgd = SgdConfig { lr: 0.2, ..SgdConfig::default() };
    let setup = ok(Setup::new("synthetic", ds, vlm, PromptShape::default(), AlgoHyper::default(), sgd, fed, PartitionConfig::default()))?;
    let spec = ScenarioSpec { split: Some(SplitMode::Random { seed: 100 }), ..ScenarioSpec::new(ScenarioKind::BaseNovel) };
    let mut trained = 0;
    let mut splits = std::collections::BTreeSet::new();
    for seed in 0..10u64 {
        let split = ok(base_novel_split(6, SplitMode::Random { seed: 100 + seed }))?;
        splits.insert(split.0.clone());
        for method in [Method::PromptFl, Method::KgCoOp, Method::CoCoOp] {
            ensure(ok(base_novel_split(6, SplitMode::Random { seed: 100 + seed }))? == split, || "split not reproducible".into())?;
            let out = ok(run_cell(&setup, &spec, method, seed))?;
            let audit = out.audit.ok_or("no leak audit")?;
            ensure(audit.novel == 0 && audit.trained > 0, || format!("{method} seed {seed}: audit {audit:?}"))?;
            trained += audit.trained;
            let get = |k: &str| out.metrics.iter().find(|m| m.0 == k).map(|m| m.1).ok_or(format!("missing {k}"));
            let (b, n, h) = (get("acc_base")?, get("acc_novel")?, get("acc_harmonic")?);
            let again = ok(harmonic_mean(b, n))?;
            ensure(h.to_bits() == again.to_bits(), || format!("{method} seed {seed}: {h} vs recomputed {again}"))?;
        }
    }
    ensure(splits.len() > 1, || "random splits never differed".into())?;
    Ok(format!("30 runs over {} distinct splits, {trained} training ids audited, none novel", splits.len()))
}

fn criterion_10() -> Result<String, String> {
    let bin = env!("CARGO_BIN_EXE_fedprompt");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (i, jobs) in ["1", "1", "4"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let started = Instant::now();
        let status = Command::new(bin)
            .args(["run", config.to_str().unwrap(), "--jobs", jobs])
            .env("FEDPROMPT_OUT", &out)
            .env("RUST_LOG", "error")
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("run {i} exited with {status}"))?;
        if *jobs == "1" {
            let elapsed = started.elapsed();
            ensure(elapsed < Duration::from_secs(10), || format!("toy run took {elapsed:?}"))?;
        }
        outputs.push(std::fs::read(out.join("results.csv")).map_err(|e| e.to_string())?);
    }
    ensure(!outputs[0].is_empty(), || "empty results.csv".into())?;
    ensure(outputs[0] == outputs[1], || "two identical runs differ".into())?;
    ensure(outputs[0] == outputs[2], || "--jobs 4 changes results.csv".into())?;
    Ok(format!("results.csv byte-identical across reruns and --jobs ({} bytes)", outputs[0].len()))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("communication cost reproduces the cost columns", criterion_1),
        ("metric oracles match the printed tables", criterion_2),
        ("analytic gradients match finite differences", criterion_3),
        ("one-client federation equals centralized SGD", criterion_4),
        ("prompt learning beats zero-shot by 20 points", criterion_5),
        ("label heterogeneity is monotone in alpha", criterion_6),
        ("Sinkhorn marginals, bounds and limits", criterion_7),
        ("reductions to plain prompt learning and projection safety", criterion_8),
        ("base/novel runs never train on novel classes", criterion_9),
        ("end-to-end runs are deterministic", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
