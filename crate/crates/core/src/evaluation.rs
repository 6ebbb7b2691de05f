//! Metrics, per-seed aggregation and the scenario drivers.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgoHyper, ClientState, LocalTrainer, Method, PromptParams, PromptShape, SgdConfig, ShareMode};
use crate::data::{
    apply_domain_shift, assign_by_proportions, balanced_subsample, base_novel_split, dirichlet_partition, kshot_iid_partition,
    stratified_split, DomainTransform, MasterDataset, PartitionPlan, SplitMode,
};
use crate::error::{config, Error, Result};
use crate::federation::{run_federation, FederationConfig, Protocol};
use crate::rng::{self, tags};
use crate::vlm::{FrozenVlm, Sample, VlmConfig};

/// `100 · correct / total`.
pub fn accuracy_percent(correct: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Evaluation("accuracy of an empty test set".into()));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

fn count_correct(trainer: &LocalTrainer, params: &PromptParams, classes: &[usize], test: &[Sample<'_>]) -> Result<usize> {
    let scorer = trainer.scorer(params, classes)?;
    test.par_iter().map(|s| scorer.predict(s).map(|p| usize::from(p == s.label))).try_reduce(|| 0, |a, b| Ok(a + b))
}

/// α_g: percent of `test` whose arg-max class (among `classes`) is right.
/// Labels are positions in `classes`.
pub fn global_accuracy(trainer: &LocalTrainer, params: &PromptParams, classes: &[usize], test: &[Sample<'_>]) -> Result<f64> {
    accuracy_percent(count_correct(trainer, params, classes, test)?, test.len())
}

/// α_p from `(accuracy, test size)` per client; empty clients are skipped.
pub fn personalized_accuracy(per_client: &[(f64, usize)]) -> Result<f64> {
    let total: usize = per_client.iter().map(|c| c.1).sum();
    if total == 0 {
        return Err(Error::Evaluation("every client test set is empty".into()));
    }
    Ok(per_client.iter().filter(|c| c.1 > 0).map(|&(a, n)| a * n as f64 / total as f64).sum())
}

/// α_h = 2ab/(a+b); zero when either side is zero.
pub fn harmonic_mean(base: f64, novel: f64) -> Result<f64> {
    if !(base >= 0.0 && novel >= 0.0) {
        return Err(Error::Domain(format!("harmonic mean of negative accuracies ({base}, {novel})")));
    }
    if base == 0.0 || novel == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * base * novel / (base + novel))
}

/// Columns where `method` strictly beats `baseline`.
pub fn superiority_indicator(method: &[f64], baseline: &[f64]) -> Result<usize> {
    if method.len() != baseline.len() {
        return Err(Error::Evaluation(format!("{} method columns against {} baseline columns", method.len(), baseline.len())));
    }
    Ok(method.iter().zip(baseline).filter(|(m, b)| m > b).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n_runs: usize,
}

pub fn aggregate_runs(values: &[f64]) -> Result<MetricCell> {
    if values.is_empty() {
        return Err(Error::Evaluation("no runs to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(MetricCell { mean, std: var.sqrt(), n_runs: values.len() })
}

/// One metric value of one seed; a row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub scenario: String,
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub method: String,
    pub dataset: String,
    pub metric: String,
    #[serde(flatten)]
    pub cell: MetricCell,
}

/// Seeds folded into mean/std cells, ordered by key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        let mut groups: BTreeMap<(&str, &str, &str, &str), Vec<f64>> = BTreeMap::new();
        for o in obs {
            groups.entry((&o.scenario, &o.method, &o.dataset, &o.metric)).or_default().push(o.value);
        }
        let rows = groups
            .into_iter()
            .map(|((scenario, method, dataset, metric), values)| {
                Ok(MetricRow {
                    scenario: scenario.into(),
                    method: method.into(),
                    dataset: dataset.into(),
                    metric: metric.into(),
                    cell: aggregate_runs(&values)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn get(&self, scenario: &str, method: &str, dataset: &str, metric: &str) -> Option<&MetricCell> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.method == method && r.dataset == dataset && r.metric == metric)
            .map(|r| &r.cell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Global,
    Personalized,
    BaseNovel,
    Fewshot,
    CrossDomain,
    CostTradeoff,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Global => "global",
            Self::Personalized => "personalized",
            Self::BaseNovel => "base_novel",
            Self::Fewshot => "fewshot",
            Self::CrossDomain => "cross_domain",
            Self::CostTradeoff => "cost_tradeoff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainTarget {
    pub name: String,
    #[serde(default)]
    pub transform: DomainTransform,
}

/// One scenario; parameters of other kinds must stay unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Label in outputs; defaults to the kind name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Overrides the protocol of the federation section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<DomainTarget>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<usize>>,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        Self { kind, name: None, protocol: None, split: None, shots: None, targets: None, prompts: None, tokens: None }
    }

    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(self.kind.name())
    }

    pub fn split_mode(&self) -> SplitMode {
        self.split.unwrap_or(SplitMode::FirstHalf)
    }

    pub fn shot_sweep(&self) -> Vec<usize> {
        self.shots.clone().unwrap_or_else(|| vec![1, 2, 4, 8, 16])
    }

    pub fn prompt_sweep(&self) -> Vec<usize> {
        self.prompts.clone().unwrap_or_else(|| vec![1, 2, 4])
    }

    pub fn token_sweep(&self) -> Vec<usize> {
        self.tokens.clone().unwrap_or_else(|| vec![4, 8, 16])
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        let stray = [
            ("split", self.split.is_some(), ScenarioKind::BaseNovel),
            ("shots", self.shots.is_some(), ScenarioKind::Fewshot),
            ("targets", self.targets.is_some(), ScenarioKind::CrossDomain),
            ("prompts", self.prompts.is_some(), ScenarioKind::CostTradeoff),
            ("tokens", self.tokens.is_some(), ScenarioKind::CostTradeoff),
        ];
        for (key, set, owner) in stray {
            if set && kind != owner {
                return config(format!("`{key}` belongs to {} scenarios, not {}", owner.name(), kind.name()));
            }
        }
        match (kind, self.protocol) {
            (ScenarioKind::Personalized, Some(p)) if p != Protocol::Personalized => {
                return config("personalized scenarios run the personalized protocol");
            }
            (k, Some(Protocol::Personalized)) if k != ScenarioKind::Personalized => {
                return config("the personalized protocol is reserved for personalized scenarios");
            }
            _ => {}
        }
        let positive = |name: &str, v: &[usize]| {
            if v.is_empty() || v.contains(&0) {
                config(format!("`{name}` must be a non-empty list of positive integers"))
            } else {
                Ok(())
            }
        };
        match kind {
            ScenarioKind::Fewshot => positive("shots", &self.shot_sweep()),
            ScenarioKind::CostTradeoff => {
                positive("prompts", &self.prompt_sweep())?;
                positive("tokens", &self.token_sweep())
            }
            ScenarioKind::CrossDomain => match &self.targets {
                Some(t) if !t.is_empty() => {
                    let mut names: Vec<&str> = t.iter().map(|t| t.name.as_str()).collect();
                    names.sort_unstable();
                    if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&"source") {
                        return config("cross-domain target names must be distinct and not `source`");
                    }
                    Ok(())
                }
                _ => config("cross_domain scenarios need at least one target"),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    /// Dirichlet concentration.
    pub alpha: f64,
    /// Balanced per-class subsample of the train split before partitioning;
    /// unset means 8 (16 under partial participation).
    pub per_class: Option<usize>,
    /// Local feature regions per image, for transport-based methods.
    pub local_regions: usize,
    pub local_perturbation: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { alpha: 0.1, per_class: None, local_regions: 4, local_perturbation: 0.1 }
    }
}

impl PartitionConfig {
    fn subsample_for(&self, protocol: Protocol) -> usize {
        self.per_class.unwrap_or(if protocol == Protocol::Partial { 16 } else { 8 })
    }
}

/// Everything a cell needs besides its scenario, method and seed.
#[derive(Debug, Clone)]
pub struct Setup {
    pub dataset_name: String,
    /// Master dataset, local maps attached.
    pub dataset: MasterDataset,
    pub vlm: Arc<FrozenVlm>,
    pub shape: PromptShape,
    pub hyper: AlgoHyper,
    /// Learning rate and momentum; batch size and epochs come from `federation`.
    pub sgd: SgdConfig,
    pub federation: FederationConfig,
    pub partition: PartitionConfig,
}

impl Setup {
    /// Fits the frozen surrogate to the class means of `dataset`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dataset_name: impl Into<String>,
        dataset: MasterDataset,
        vlm: VlmConfig,
        shape: PromptShape,
        hyper: AlgoHyper,
        sgd: SgdConfig,
        federation: FederationConfig,
        partition: PartitionConfig,
    ) -> Result<Self> {
        if vlm.d_feature != dataset.dim() {
            return config(format!("model feature width {} differs from image width {}", vlm.d_feature, dataset.dim()));
        }
        hyper.validate()?;
        federation.validate()?;
        if !(partition.alpha > 0.0) || !partition.alpha.is_finite() {
            return config(format!("partition.alpha must be positive, got {}", partition.alpha));
        }
        if partition.local_regions == 0 {
            return config("partition.local_regions must be at least 1");
        }
        let seed = vlm.seed;
        let world = FrozenVlm::aligned(vlm, &dataset.class_means()?)?;
        let dataset = dataset.with_local_maps(partition.local_regions, partition.local_perturbation, seed)?;
        Ok(Self { dataset_name: dataset_name.into(), dataset, vlm: Arc::new(world), shape, hyper, sgd, federation, partition })
    }

    pub fn federation_for(&self, spec: &ScenarioSpec) -> FederationConfig {
        Self::federation_for_spec(&self.federation, spec)
    }

    /// `base` with the client count and participation of the scenario's protocol.
    pub fn federation_for_spec(base: &FederationConfig, spec: &ScenarioSpec) -> FederationConfig {
        let protocol = match spec.kind {
            ScenarioKind::Personalized => Protocol::Personalized,
            _ => spec.protocol.unwrap_or(match base.protocol {
                Protocol::Personalized => Protocol::Standard,
                p => p,
            }),
        };
        if protocol == base.protocol {
            return base.clone();
        }
        let preset = FederationConfig::for_protocol(protocol);
        FederationConfig {
            protocol,
            num_clients: preset.num_clients,
            participation_fraction: preset.participation_fraction,
            ..base.clone()
        }
    }
}

/// One point of a training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Sweep entry the curve belongs to (`k4`, `prompts2`, ...); empty otherwise.
    pub variant: String,
    pub round: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_loss: Option<f64>,
    /// Scalars moved so far.
    pub cost: u64,
}

/// Training ids of a base/novel run checked against the novel classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakAudit {
    pub trained: usize,
    pub novel: usize,
}

#[derive(Debug, Clone, Default)]
pub struct CellOutput {
    /// `(metric, value)` in emission order.
    pub metrics: Vec<(String, f64)>,
    pub curves: Vec<CurvePoint>,
    pub audit: Option<LeakAudit>,
}

fn subsample(setup: &Setup, train: &MasterDataset, fed: &FederationConfig, seed: u64) -> Result<MasterDataset> {
    let per_class = setup.partition.subsample_for(fed.protocol);
    balanced_subsample(train, per_class, &mut rng::stream(&[tags::DATA, 0x5355, seed]))
}

fn partition(setup: &Setup, pool: &MasterDataset, fed: &FederationConfig, seed: u64) -> Result<PartitionPlan> {
    dirichlet_partition(pool.labels(), pool.classes(), fed.num_clients, setup.partition.alpha, &mut rng::stream(&[tags::PARTITION, seed]))
}

fn client_samples<'a>(pool: &'a MasterDataset, plan: &PartitionPlan) -> Vec<Vec<Sample<'a>>> {
    plan.clients.iter().map(|idx| pool.samples_of(idx)).collect()
}

struct Trained {
    /// Metric vector at the best round (by the first entry).
    best: Vec<f64>,
    curve: Vec<CurvePoint>,
    seen: Vec<usize>,
}

/// Trains `trainer` (or evaluates it once, for the zero-shot baseline) and
/// keeps the metric vector of the round with the best first metric.
fn train_and_track<E>(
    trainer: &LocalTrainer,
    clients: &[Vec<Sample<'_>>],
    fed: &FederationConfig,
    seed: u64,
    variant: &str,
    mut eval: E,
) -> Result<Trained>
where
    E: FnMut(&PromptParams, &[ClientState]) -> Result<Vec<f64>>,
{
    if !trainer.method().is_trained() {
        let states = vec![ClientState::default(); clients.len()];
        let best = eval(&trainer.initial_global(), &states)?;
        return Ok(Trained { best, curve: Vec::new(), seen: Vec::new() });
    }
    let mut evals: Vec<Vec<f64>> = Vec::new();
    let run = run_federation(trainer, clients, fed, seed, |params, states| {
        let v = eval(params, states)?;
        let primary = v[0];
        evals.push(v);
        Ok(primary)
    })?;
    let best = evals
        .iter()
        .fold(None::<&Vec<f64>>, |acc, v| match acc {
            Some(b) if b[0] >= v[0] => Some(b),
            _ => Some(v),
        })
        .cloned()
        .ok_or_else(|| Error::Evaluation("run evaluated no round".into()))?;
    let mut cost = 0;
    let mut seen = Vec::new();
    let curve = run
        .server
        .history
        .iter()
        .map(|r| {
            cost += r.cost.download + r.cost.upload;
            seen.extend_from_slice(&r.seen);
            let losses: Vec<f64> = r.client_losses.iter().map(|l| l.1).collect();
            CurvePoint {
                variant: variant.to_string(),
                round: r.round,
                accuracy: r.accuracy,
                mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
                cost,
            }
        })
        .collect();
    seen.sort_unstable();
    seen.dedup();
    Ok(Trained { best, curve, seen })
}

fn trainer_for(
    setup: &Setup,
    method: Method,
    shape: PromptShape,
    share: ShareMode,
    fed: &FederationConfig,
    classes: Vec<usize>,
    seed: u64,
) -> Result<LocalTrainer> {
    let sgd = SgdConfig { batch_size: fed.batch_size, local_epochs: fed.local_epochs, ..setup.sgd.clone() };
    LocalTrainer::new(setup.vlm.clone(), method, setup.hyper.clone(), sgd, shape, share, classes, rng::derive_seed(&[tags::INIT, seed]))
}

/// Runs one `(scenario, method, seed)` cell.
pub fn run_cell(setup: &Setup, spec: &ScenarioSpec, method: Method, seed: u64) -> Result<CellOutput> {
    spec.validate()?;
    let fed = setup.federation_for(spec);
    fed.validate()?;
    let all: Vec<usize> = (0..setup.dataset.classes()).collect();
    let parts = stratified_split(&setup.dataset, &mut rng::stream(&[tags::SPLIT, seed]));
    let mut out = CellOutput::default();
    match spec.kind {
        ScenarioKind::Global => {
            let pool = subsample(setup, &parts.train, &fed, seed)?;
            let plan = partition(setup, &pool, &fed, seed)?;
            let trainer = trainer_for(setup, method, setup.shape, ShareMode::Global, &fed, all.clone(), seed)?;
            let test = parts.test.samples();
            let t = train_and_track(&trainer, &client_samples(&pool, &plan), &fed, seed, "", |p, _| {
                Ok(vec![global_accuracy(&trainer, p, &all, &test)?])
            })?;
            out.metrics.push(("acc".into(), t.best[0]));
            out.curves = t.curve;
        }
        ScenarioKind::Personalized => {
            let pool = subsample(setup, &parts.train, &fed, seed)?;
            let plan = partition(setup, &pool, &fed, seed)?;
            let proportions = plan.proportions.as_ref().expect("Dirichlet plans carry proportions");
            let test_lists = assign_by_proportions(parts.test.labels(), proportions, &mut rng::stream(&[tags::PARTITION, 1, seed]))?;
            let tests: Vec<Vec<Sample<'_>>> = test_lists.iter().map(|l| parts.test.samples_of(l)).collect();
            let trainer = trainer_for(setup, method, setup.shape, ShareMode::Personalized, &fed, all.clone(), seed)?;
            let t = train_and_track(&trainer, &client_samples(&pool, &plan), &fed, seed, "", |global, states| {
                let per_client = tests
                    .iter()
                    .zip(states)
                    .map(|(test, state)| {
                        if test.is_empty() {
                            return Ok((0.0, 0));
                        }
                        let model = trainer.client_model(global, state)?;
                        Ok((global_accuracy(&trainer, &model, &all, test)?, test.len()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(vec![personalized_accuracy(&per_client)?])
            })?;
            out.metrics.push(("acc_personalized".into(), t.best[0]));
            out.curves = t.curve;
        }
        ScenarioKind::BaseNovel => {
            let mode = match spec.split_mode() {
                SplitMode::Random { seed: s } => SplitMode::Random { seed: s.wrapping_add(seed) },
                m => m,
            };
            let (base, novel) = base_novel_split(setup.dataset.classes(), mode)?;
            let pool = subsample(setup, &parts.train.restrict_to_classes(&base), &fed, seed)?;
            let plan = partition(setup, &pool, &fed, seed)?;
            let base_test = parts.test.restrict_to_classes(&base);
            let novel_test = parts.test.restrict_to_classes(&novel);
            let (bt, nt) = (base_test.samples(), novel_test.samples());
            let trainer = trainer_for(setup, method, setup.shape, ShareMode::Global, &fed, base.clone(), seed)?;
            let t = train_and_track(&trainer, &client_samples(&pool, &plan), &fed, seed, "", |p, _| {
                Ok(vec![global_accuracy(&trainer, p, &base, &bt)?, global_accuracy(&trainer, p, &novel, &nt)?])
            })?;
            let labels = setup.dataset.labels();
            let leaked = t.seen.iter().filter(|&&id| novel.binary_search(&labels[id]).is_ok()).count();
            if leaked > 0 {
                return Err(Error::Evaluation(format!("{leaked} novel-class samples entered training")));
            }
            out.audit = Some(LeakAudit { trained: t.seen.len(), novel: leaked });
            let (ab, an) = (t.best[0], t.best[1]);
            out.metrics.push(("acc_base".into(), ab));
            out.metrics.push(("acc_novel".into(), an));
            out.metrics.push(("acc_harmonic".into(), harmonic_mean(ab, an)?));
            out.curves = t.curve;
        }
        ScenarioKind::Fewshot => {
            let test = parts.test.samples();
            for k in spec.shot_sweep() {
                let plan = kshot_iid_partition(
                    parts.train.labels(),
                    parts.train.classes(),
                    fed.num_clients,
                    k,
                    &mut rng::stream(&[tags::PARTITION, 2, seed]),
                )?;
                let trainer = trainer_for(setup, method, setup.shape, ShareMode::Global, &fed, all.clone(), seed)?;
                let t = train_and_track(&trainer, &client_samples(&parts.train, &plan), &fed, seed, &format!("k{k}"), |p, _| {
                    Ok(vec![global_accuracy(&trainer, p, &all, &test)?])
                })?;
                out.metrics.push((format!("acc_k{k}"), t.best[0]));
                out.curves.extend(t.curve);
            }
        }
        ScenarioKind::CrossDomain => {
            let pool = subsample(setup, &parts.train, &fed, seed)?;
            let plan = partition(setup, &pool, &fed, seed)?;
            let targets = spec.targets.as_deref().unwrap_or_default();
            let shifted = targets
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    apply_domain_shift(&parts.test, &t.transform)?.with_local_maps(
                        setup.partition.local_regions,
                        setup.partition.local_perturbation,
                        rng::derive_seed(&[tags::LOCALS, seed, i as u64]),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut sets = vec![parts.test.samples()];
            sets.extend(shifted.iter().map(MasterDataset::samples));
            let trainer = trainer_for(setup, method, setup.shape, ShareMode::Global, &fed, all.clone(), seed)?;
            let t = train_and_track(&trainer, &client_samples(&pool, &plan), &fed, seed, "", |p, _| {
                sets.iter().map(|s| global_accuracy(&trainer, p, &all, s)).collect()
            })?;
            out.metrics.push(("acc_source".into(), t.best[0]));
            for (target, v) in targets.iter().zip(&t.best[1..]) {
                out.metrics.push((format!("acc_{}", target.name), *v));
            }
            out.curves = t.curve;
        }
        ScenarioKind::CostTradeoff => {
            let pool = subsample(setup, &parts.train, &fed, seed)?;
            let plan = partition(setup, &pool, &fed, seed)?;
            let clients = client_samples(&pool, &plan);
            let test = parts.test.samples();
            let mut sweep: Vec<(String, PromptShape)> =
                spec.prompt_sweep().into_iter().map(|n| (format!("prompts{n}"), PromptShape { prompts: n, ..setup.shape })).collect();
            sweep.extend(spec.token_sweep().into_iter().map(|l| (format!("tokens{l}"), PromptShape { len: l, ..setup.shape })));
            for (variant, shape) in sweep {
                let trainer = trainer_for(setup, method, shape, ShareMode::Global, &fed, all.clone(), seed)?;
                let t =
                    train_and_track(&trainer, &clients, &fed, seed, &variant, |p, _| Ok(vec![global_accuracy(&trainer, p, &all, &test)?]))?;
                let cost = t.curve.last().map_or(0, |c| c.cost);
                out.metrics.push((format!("acc_{variant}"), t.best[0]));
                out.metrics.push((format!("cost_{variant}"), cost as f64 / 1e6));
                out.curves.extend(t.curve);
            }
        }
    }
    Ok(out)
}

/// Every `(method, seed)` cell of one scenario, run in order.
pub fn run_scenario(setup: &Setup, spec: &ScenarioSpec, methods: &[Method], seeds: &[u64]) -> Result<(Vec<Observation>, MetricTable)> {
    let mut obs = Vec::new();
    for &method in methods {
        for &seed in seeds {
            for (metric, value) in run_cell(setup, spec, method, seed)?.metrics {
                obs.push(Observation {
                    scenario: spec.label().to_string(),
                    method: method.name().to_string(),
                    dataset: setup.dataset_name.clone(),
                    seed,
                    metric,
                    value,
                });
            }
        }
    }
    let table = MetricTable::from_observations(&obs)?;
    Ok((obs, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        assert_eq!(accuracy_percent(3, 4).unwrap(), 75.0);
        assert!(accuracy_percent(0, 0).is_err());
        assert_eq!(personalized_accuracy(&[(100.0, 10), (50.0, 30)]).unwrap(), 62.5);
        assert_eq!(personalized_accuracy(&[(40.0, 0), (70.0, 5)]).unwrap(), 70.0);
        assert!(matches!(personalized_accuracy(&[(1.0, 0)]), Err(Error::Evaluation(_))));
        assert_eq!(harmonic_mean(0.0, 50.0).unwrap(), 0.0);
        assert_eq!(harmonic_mean(42.0, 42.0).unwrap(), 42.0);
        assert!(matches!(harmonic_mean(-1.0, 2.0), Err(Error::Domain(_))));
        assert_eq!(superiority_indicator(&[2.0; 8], &[1.0; 8]).unwrap(), 8);
        assert_eq!(superiority_indicator(&[1.0, 2.0], &[1.0, 1.0]).unwrap(), 1);
        assert!(superiority_indicator(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let one = aggregate_runs(&[91.5]).unwrap();
        assert_eq!((one.mean, one.std, one.n_runs), (91.5, 0.0, 1));
        let three = aggregate_runs(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(three.mean, 2.0);
        assert!((three.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(aggregate_runs(&[7.0; 5]).unwrap().std, 0.0);
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn table_groups_by_key() {
        let o = |method: &str, seed, value| Observation {
            scenario: "global".into(),
            method: method.into(),
            dataset: "synthetic".into(),
            seed,
            metric: "acc".into(),
            value,
        };
        let t = MetricTable::from_observations(&[o("promptfl", 0, 50.0), o("fedotp", 0, 60.0), o("promptfl", 1, 70.0)]).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.get("global", "promptfl", "synthetic", "acc").unwrap().mean, 60.0);
    }

    #[test]
    fn specs_reject_foreign_parameters() {
        let mut s = ScenarioSpec::new(ScenarioKind::Global);
        assert!(s.validate().is_ok());
        s.shots = Some(vec![1]);
        assert!(s.validate().unwrap_err().to_string().contains("shots"));
        let mut c = ScenarioSpec::new(ScenarioKind::CrossDomain);
        assert!(c.validate().is_err());
        c.targets = Some(vec![DomainTarget { name: "rot".into(), transform: DomainTransform::default() }]);
        assert!(c.validate().is_ok());
        let mut p = ScenarioSpec::new(ScenarioKind::Personalized);
        p.protocol = Some(Protocol::Partial);
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn harmonic_below_geometric_below_arithmetic(a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let h = harmonic_mean(a, b).unwrap();
            let g = (a * b).sqrt();
            prop_assert!(h <= g * (1.0 + 1e-12));
            prop_assert!(g <= (a + b) / 2.0 * (1.0 + 1e-12));
            prop_assert!((harmonic_mean(a, a).unwrap() - a).abs() <= 1e-12 * a);
        }

        #[test]
        fn superiority_ignores_common_shifts(
            rows in proptest::collection::vec((0i32..200, 0i32..200), 1..12),
            shift in -500i32..500,
        ) {
            let m: Vec<f64> = rows.iter().map(|r| r.0 as f64 / 2.0).collect();
            let b: Vec<f64> = rows.iter().map(|r| r.1 as f64 / 2.0).collect();
            let s = shift as f64 / 4.0;
            let ms: Vec<f64> = m.iter().map(|v| v + s).collect();
            let bs: Vec<f64> = b.iter().map(|v| v + s).collect();
            prop_assert_eq!(superiority_indicator(&m, &b).unwrap(), superiority_indicator(&ms, &bs).unwrap());
        }
    }
}
