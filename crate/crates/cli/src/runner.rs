use std::fs;
use std::path::{Path, PathBuf};

use fedprompt_core::algorithms::{LocalTrainer, Method, PromptShape, SgdConfig, ShareMode};
use fedprompt_core::evaluation::{run_cell, CurvePoint, LeakAudit, MetricTable, Observation, ScenarioKind, ScenarioSpec, Setup};
use fedprompt_core::federation::dry_run_ledger;
use fedprompt_core::vlm::FrozenVlm;
use rayon::prelude::*;
use serde::Serialize;

use crate::{CliError, ExperimentConfig};

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";
pub const CURVES: &str = "curves.jsonl";
pub const FAILURES: &str = "failures.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub scenario: String,
    #[serde(skip)]
    pub scenario_index: usize,
    pub method: Method,
    pub seed: u64,
}

/// Scenario-major, then method, then seed.
pub fn plan_cells(cfg: &ExperimentConfig, seed_offset: u64) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (i, s) in cfg.scenarios.iter().enumerate() {
        for &method in &cfg.methods {
            for &seed in &cfg.seeds {
                cells.push(Cell { scenario: s.label().to_string(), scenario_index: i, method, seed: seed + seed_offset });
            }
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    pub seed_offset: u64,
}

/// `FEDPROMPT_OUT` if set, otherwise the configured directory.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os("FEDPROMPT_OUT").map(PathBuf::from).unwrap_or_else(|| cfg.output.clone())
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    #[serde(flatten)]
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
struct AuditRecord<'a> {
    #[serde(flatten)]
    cell: &'a Cell,
    #[serde(flatten)]
    audit: LeakAudit,
}

#[derive(Serialize)]
struct CurveRecord<'a> {
    scenario: &'a str,
    method: Method,
    dataset: &'a str,
    seed: u64,
    #[serde(flatten)]
    point: &'a CurvePoint,
}

#[derive(Serialize)]
struct ResultsDocument<'a> {
    config: &'a ExperimentConfig,
    cells: usize,
    observations: &'a [Observation],
    table: &'a MetricTable,
    audits: Vec<AuditRecord<'a>>,
    failures: &'a [CellFailure],
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub cells: usize,
    pub observations: Vec<Observation>,
    pub failures: Vec<CellFailure>,
}

/// Runs every cell and writes results; failed cells are listed in
/// `failures.json` and left out of the tables.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let setup = cfg.setup()?;
    let cells = plan_cells(cfg, opts.seed_offset);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Output(format!("cannot start workers: {e}")))?;
    let outputs: Vec<_> =
        pool.install(|| cells.par_iter().map(|c| run_cell(&setup, &cfg.scenarios[c.scenario_index], c.method, c.seed)).collect());

    let mut observations = Vec::new();
    let mut curves = Vec::new();
    let mut audits = Vec::new();
    let mut failures = Vec::new();
    for (cell, out) in cells.iter().zip(&outputs) {
        match out {
            Ok(out) => {
                for (metric, value) in &out.metrics {
                    observations.push(Observation {
                        scenario: cell.scenario.clone(),
                        method: cell.method.name().to_string(),
                        dataset: setup.dataset_name.clone(),
                        seed: cell.seed,
                        metric: metric.clone(),
                        value: *value,
                    });
                }
                curves.extend(out.curves.iter().map(|p| (cell, p)));
                if let Some(a) = out.audit {
                    audits.push(AuditRecord { cell, audit: a });
                }
            }
            Err(e) => {
                log::error!("{} / {} / seed {} failed: {e}", cell.scenario, cell.method, cell.seed);
                failures.push(CellFailure { cell: cell.clone(), error: e.to_string() });
            }
        }
    }
    let table = MetricTable::from_observations(&observations).unwrap_or_default();

    fs::create_dir_all(&opts.out_dir)?;
    let mut w = csv::Writer::from_path(opts.out_dir.join(RESULTS_CSV))?;
    for o in &observations {
        w.serialize(o)?;
    }
    w.flush()?;

    let mut lines = String::new();
    for (cell, point) in &curves {
        let rec = CurveRecord { scenario: &cell.scenario, method: cell.method, dataset: &setup.dataset_name, seed: cell.seed, point };
        lines.push_str(&serde_json::to_string(&rec)?);
        lines.push('\n');
    }
    fs::write(opts.out_dir.join(CURVES), lines)?;

    let doc = ResultsDocument { config: cfg, cells: cells.len(), observations: &observations, table: &table, audits, failures: &failures };
    fs::write(opts.out_dir.join(RESULTS_JSON), serde_json::to_string_pretty(&doc)? + "\n")?;

    let manifest = opts.out_dir.join(FAILURES);
    if failures.is_empty() {
        if manifest.exists() {
            fs::remove_file(&manifest)?;
        }
    } else {
        fs::write(&manifest, serde_json::to_string_pretty(&failures)? + "\n")?;
    }
    Ok(RunSummary { cells: cells.len(), observations, failures })
}

fn payload_scalars(
    vlm: &std::sync::Arc<FrozenVlm>,
    cfg: &ExperimentConfig,
    spec: &ScenarioSpec,
    method: Method,
    shape: PromptShape,
) -> Result<usize, CliError> {
    let share = if spec.kind == ScenarioKind::Personalized { ShareMode::Personalized } else { ShareMode::Global };
    let classes: Vec<usize> = (0..vlm.num_classes()).collect();
    let t = LocalTrainer::new(vlm.clone(), method, cfg.algorithms.clone(), SgdConfig::default(), shape, share, classes, 0)?;
    Ok(t.payload_scalars())
}

/// The cell plan plus per-exchange payload and planned communication; no
/// training and no files.
pub fn dry_run(cfg: &ExperimentConfig, seed_offset: u64, out: &mut impl std::io::Write) -> Result<(), CliError> {
    cfg.validate()?;
    let classes = cfg.data.classes()?;
    let width = match &cfg.data.table {
        Some(_) => cfg.data.load()?.dim(),
        None => cfg.data.synthetic.dim,
    };
    let vlm = std::sync::Arc::new(FrozenVlm::new(cfg.model.vlm(width), classes)?);
    let cells = plan_cells(cfg, seed_offset);
    writeln!(out, "cells: {}", cells.len())?;
    for c in &cells {
        writeln!(out, "  {}\t{}\tseed={}", c.scenario, c.method, c.seed)?;
    }
    for spec in &cfg.scenarios {
        let fed = Setup::federation_for_spec(&cfg.federation, spec);
        let mut shapes = vec![(String::new(), cfg.model.shape())];
        if spec.kind == ScenarioKind::CostTradeoff {
            shapes = spec
                .prompt_sweep()
                .into_iter()
                .map(|n| (format!(" prompts{n}"), PromptShape { prompts: n, ..cfg.model.shape() }))
                .chain(spec.token_sweep().into_iter().map(|l| (format!(" tokens{l}"), PromptShape { len: l, ..cfg.model.shape() })))
                .collect();
        }
        for &method in &cfg.methods {
            for (variant, shape) in &shapes {
                let scalars = payload_scalars(&vlm, cfg, spec, method, *shape)?;
                let ledger = dry_run_ledger(scalars, &fed, cfg.seeds[0] + seed_offset)?;
                writeln!(
                    out,
                    "{}{variant}\t{method}\tpayload={scalars}\tcost={} ({:.2}M)",
                    spec.label(),
                    ledger.total(),
                    ledger.millions()
                )?;
            }
        }
    }
    Ok(())
}

pub fn results_path(dir: &Path) -> PathBuf {
    dir.join(RESULTS_CSV)
}
