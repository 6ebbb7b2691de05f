//! Server/client round orchestration.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{ClientState, LocalTrainer, PromptParams};
use crate::error::{config, Error, Result};
use crate::rng::{self, tags};
use crate::vlm::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Standard,
    Partial,
    Personalized,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub protocol: Protocol,
    pub num_clients: usize,
    pub participation_fraction: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Evaluate every this many rounds (the last round is always evaluated).
    pub eval_every: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self::for_protocol(Protocol::Standard)
    }
}

impl FederationConfig {
    /// Client count and participation of each protocol.
    pub fn for_protocol(protocol: Protocol) -> Self {
        let (num_clients, participation_fraction) = match protocol {
            Protocol::Standard | Protocol::Personalized => (10, 1.0),
            Protocol::Partial => (100, 0.1),
            Protocol::Centralized => (1, 1.0),
        };
        Self { protocol, num_clients, participation_fraction, rounds: 50, local_epochs: 1, batch_size: 16, eval_every: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return config("num_clients must be at least 1");
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return config(format!("participation_fraction must lie in (0, 1], got {}", self.participation_fraction));
        }
        if self.rounds == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return config("rounds, batch_size and eval_every must be at least 1");
        }
        if self.protocol == Protocol::Centralized && self.num_clients != 1 {
            return config("the centralized protocol runs a single client");
        }
        sample_size(self.num_clients, self.participation_fraction).map(|_| ())
    }

    pub fn sampled_per_round(&self) -> Result<usize> {
        sample_size(self.num_clients, self.participation_fraction)
    }
}

fn sample_size(n: usize, fraction: f64) -> Result<usize> {
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return config(format!("participation {fraction} of {n} clients samples nobody"));
    }
    Ok(k.min(n))
}

/// `round(fraction·n)` distinct client ids, ascending.
pub fn sample_clients<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return config(format!("participation_fraction must lie in (0, 1], got {fraction}"));
    }
    let k = sample_size(n, fraction)?;
    if k == n {
        return Ok((0..n).collect());
    }
    let mut ids = index::sample(rng, n, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// `ρ_i = |D_i| / Σ_j |D_j|`; `None` when every dataset is empty.
pub fn compute_weights(sizes: &[usize]) -> Option<Vec<f64>> {
    let total: usize = sizes.iter().sum();
    (total > 0).then(|| sizes.iter().map(|&s| s as f64 / total as f64).collect())
}

/// Weighted average of flat payloads, reduced in ascending client id.
///
/// Computed as `p_first + Σ ρ_i (p_i − p_first)`, so one payload, or
/// identical payloads, come back bit for bit.
pub fn fedavg_aggregate(payloads: &[(usize, Vec<f64>)], weights: &[f64]) -> Result<Vec<f64>> {
    if payloads.is_empty() || payloads.len() != weights.len() {
        return Err(Error::Aggregation(format!("{} payloads for {} weights", payloads.len(), weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::Aggregation("weights must be non-negative and sum to 1".into()));
    }
    let len = payloads[0].1.len();
    if payloads.iter().any(|(_, p)| p.len() != len) {
        return Err(Error::Aggregation("payload shapes differ".into()));
    }
    let mut order: Vec<usize> = (0..payloads.len()).collect();
    order.sort_by_key(|&i| payloads[i].0);
    let first = &payloads[order[0]].1;
    let mut acc = first.clone();
    for &i in &order[1..] {
        let (w, p) = (weights[i], &payloads[i].1);
        for ((a, x), f) in acc.iter_mut().zip(p).zip(first) {
            *a += w * (x - f);
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCost {
    pub download: u64,
    pub upload: u64,
}

/// Communicated scalars, both directions, per round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub rounds: Vec<RoundCost>,
}

impl CostLedger {
    pub fn record(&mut self, cost: RoundCost) {
        self.rounds.push(cost);
    }

    /// χ: total scalars moved.
    pub fn total(&self) -> u64 {
        self.rounds.iter().map(|r| r.download + r.upload).sum()
    }

    pub fn millions(&self) -> f64 {
        self.total() as f64 / 1e6
    }
}

/// Closed form `scalars · rounds · clients · 2`.
pub fn closed_form_cost(payload_scalars: usize, rounds: usize, sampled_per_round: usize) -> u64 {
    (payload_scalars * rounds * sampled_per_round * 2) as u64
}

/// Ledger of a run in which every sampled client downloads and uploads,
/// without training anything.
pub fn dry_run_ledger(payload_scalars: usize, cfg: &FederationConfig, seed: u64) -> Result<CostLedger> {
    cfg.validate()?;
    let mut ledger = CostLedger::default();
    for t in 0..cfg.rounds {
        let sampled = sample_clients(cfg.num_clients, cfg.participation_fraction, &mut sampling_rng(seed, t))?;
        let moved = (payload_scalars * sampled.len()) as u64;
        ledger.record(RoundCost { download: moved, upload: moved });
    }
    Ok(ledger)
}

fn sampling_rng(seed: u64, round: usize) -> rng::SimRng {
    rng::stream(&[tags::SAMPLE, seed, round as u64])
}

/// Local-training stream of one client in one round; independent of
/// scheduling.
pub fn client_rng(seed: u64, client: usize, round: usize) -> rng::SimRng {
    rng::stream(&[tags::CLIENT, seed, client as u64, round as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub sampled: Vec<usize>,
    /// Clients whose payload entered the aggregate.
    pub aggregated: Vec<usize>,
    pub client_losses: Vec<(usize, f64)>,
    pub failures: Vec<(usize, String)>,
    /// Sample ids that entered any local batch this round, ascending.
    pub seen: Vec<usize>,
    pub cost: RoundCost,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: PromptParams,
    pub round: usize,
    pub ledger: CostLedger,
    pub history: Vec<RoundReport>,
}

impl ServerState {
    pub fn new(global: PromptParams) -> Self {
        Self { global, round: 0, ledger: CostLedger::default(), history: Vec::new() }
    }
}

/// Sample, broadcast, train locally (in parallel), aggregate.
pub fn run_round(
    server: &mut ServerState,
    trainer: &LocalTrainer,
    clients: &[Vec<Sample<'_>>],
    states: &mut [ClientState],
    cfg: &FederationConfig,
    seed: u64,
) -> Result<RoundReport> {
    let t = server.round;
    if t >= cfg.rounds {
        return config(format!("round {t} beyond the {} configured rounds", cfg.rounds));
    }
    if clients.len() != cfg.num_clients || states.len() != cfg.num_clients {
        return config(format!("{} client datasets for {} configured clients", clients.len(), cfg.num_clients));
    }
    let sampled = sample_clients(cfg.num_clients, cfg.participation_fraction, &mut sampling_rng(seed, t))?;
    let scalars = trainer.payload_scalars() as u64;
    let mut cost = RoundCost { download: scalars * sampled.len() as u64, upload: 0 };

    let mut taken: Vec<(usize, ClientState)> = sampled.iter().map(|&i| (i, std::mem::take(&mut states[i]))).collect();
    let global = &server.global;
    let outcomes: Vec<Result<crate::algorithms::LocalOutcome>> = taken
        .par_iter_mut()
        .map(|(id, state)| {
            if clients[*id].is_empty() {
                // Takes part with weight zero and echoes the broadcast.
                log::warn!("round {t}: client {id} has no training data");
                return Ok(crate::algorithms::LocalOutcome { payload: global.clone(), mean_loss: f64::NAN, steps: 0, seen: Vec::new() });
            }
            trainer.train(global, state, &clients[*id], t, cfg.rounds, &mut client_rng(seed, *id, t))
        })
        .collect();
    let mut payloads = Vec::new();
    let mut sizes = Vec::new();
    let mut report = RoundReport {
        round: t,
        sampled: sampled.clone(),
        aggregated: Vec::new(),
        client_losses: Vec::new(),
        failures: Vec::new(),
        seen: Vec::new(),
        cost,
        accuracy: None,
    };
    for ((id, state), outcome) in taken.into_iter().zip(outcomes) {
        states[id] = state;
        match outcome {
            Ok(out) => {
                cost.upload += scalars;
                if out.steps > 0 {
                    report.client_losses.push((id, out.mean_loss));
                }
                report.seen.extend(out.seen);
                payloads.push((id, out.payload.flatten()));
                sizes.push(clients[id].len());
                report.aggregated.push(id);
            }
            Err(e) => {
                log::warn!("round {t}: client {id} excluded: {e}");
                report.failures.push((id, e.to_string()));
            }
        }
    }
    report.cost = cost;
    report.seen.sort_unstable();
    report.seen.dedup();
    match compute_weights(&sizes) {
        Some(weights) => {
            let flat = fedavg_aggregate(&payloads, &weights)?;
            server.global = server.global.with_flat(&flat)?;
        }
        None => log::warn!("round {t}: no client produced an update; global model kept"),
    }
    server.ledger.record(cost);
    server.round += 1;
    Ok(report)
}

/// Outcome of one seed of one federated run.
#[derive(Debug, Clone)]
pub struct FederatedRun {
    pub server: ServerState,
    pub states: Vec<ClientState>,
    /// Best evaluated accuracy over rounds.
    pub best_accuracy: f64,
    pub final_accuracy: f64,
}

/// Full `rounds`-round loop. `evaluate` sees the server model and client
/// states after each evaluated round.
pub fn run_federation<F>(
    trainer: &LocalTrainer,
    clients: &[Vec<Sample<'_>>],
    cfg: &FederationConfig,
    seed: u64,
    mut evaluate: F,
) -> Result<FederatedRun>
where
    F: FnMut(&PromptParams, &[ClientState]) -> Result<f64>,
{
    cfg.validate()?;
    let mut server = ServerState::new(trainer.initial_global());
    let mut states = vec![ClientState::default(); cfg.num_clients];
    let mut best = f64::NEG_INFINITY;
    let mut last = f64::NAN;
    for t in 0..cfg.rounds {
        let mut report = run_round(&mut server, trainer, clients, &mut states, cfg, seed)?;
        if (t + 1) % cfg.eval_every == 0 || t + 1 == cfg.rounds {
            let acc = evaluate(&server.global, &states)?;
            best = best.max(acc);
            last = acc;
            report.accuracy = Some(acc);
        }
        server.history.push(report);
    }
    Ok(FederatedRun { server, states, best_accuracy: best, final_accuracy: last })
}
