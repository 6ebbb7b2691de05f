use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use fedprompt_core::algorithms::Method;
use fedprompt_core::evaluation::{superiority_indicator, MetricCell, MetricTable, Observation};
use serde::Serialize;

use crate::runner::RESULTS_CSV;
use crate::CliError;

pub const REPORT: &str = "report.md";
pub const COST_PLOT: &str = "cost_tradeoff.csv";
const BASELINE: &str = "promptfl";

pub fn read_observations(dir: &Path) -> Result<Vec<Observation>, CliError> {
    let path = dir.join(RESULTS_CSV);
    if !path.exists() {
        return Err(CliError::Output(format!("no {RESULTS_CSV} in {}", dir.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<Observation>, _>>()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub method: String,
    pub cells: Vec<Option<MetricCell>>,
    /// Datasets where this method's mean beats the baseline's.
    pub superiority: Option<usize>,
}

/// Method × dataset grid of one metric in one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub scenario: String,
    pub metric: String,
    pub datasets: Vec<String>,
    pub rows: Vec<GridRow>,
    pub has_superiority: bool,
}

fn method_rank(name: &str) -> (usize, String) {
    let rank = Method::parse(name).ok().map_or(usize::MAX, |m| {
        std::iter::once(Method::ZsClip).chain(Method::TRAINED.iter().copied()).position(|x| x == m).unwrap_or(usize::MAX)
    });
    (rank, name.to_string())
}

pub fn build_grids(table: &MetricTable) -> Vec<Grid> {
    let keys: BTreeSet<(&str, &str)> = table.rows.iter().map(|r| (r.scenario.as_str(), r.metric.as_str())).collect();
    let mut grids = Vec::new();
    for (scenario, metric) in keys {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.scenario == scenario && r.metric == metric).collect();
        let datasets: Vec<String> = rows.iter().map(|r| r.dataset.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        methods.sort_by_key(|m| method_rank(m));
        let cell = |m: &str, d: &str| rows.iter().find(|r| r.method == m && r.dataset == d).map(|r| r.cell);
        let baseline: Option<Vec<Option<MetricCell>>> =
            methods.iter().any(|m| m == BASELINE).then(|| datasets.iter().map(|d| cell(BASELINE, d)).collect());
        let has_superiority = baseline.is_some() && methods.len() > 1;
        if baseline.is_none() && methods.len() > 1 {
            log::warn!("{scenario}/{metric}: no {BASELINE} rows; the # column is omitted");
        }
        let grid_rows = methods
            .iter()
            .map(|m| {
                let cells: Vec<Option<MetricCell>> = datasets.iter().map(|d| cell(m, d)).collect();
                let superiority = match (&baseline, has_superiority && m != BASELINE) {
                    (Some(base), true) => {
                        let (mine, theirs): (Vec<f64>, Vec<f64>) =
                            cells.iter().zip(base).filter_map(|(a, b)| Some((a.as_ref()?.mean, b.as_ref()?.mean))).unzip();
                        superiority_indicator(&mine, &theirs).ok()
                    }
                    _ => None,
                };
                GridRow { method: m.clone(), cells, superiority }
            })
            .collect();
        grids.push(Grid { scenario: scenario.into(), metric: metric.into(), datasets, rows: grid_rows, has_superiority });
    }
    grids
}

pub fn render_grid(g: &Grid) -> String {
    let mut s = format!("### {} / {}\n\n| method |", g.scenario, g.metric);
    for d in &g.datasets {
        write!(s, " {d} |").unwrap();
    }
    if g.has_superiority {
        s.push_str(" # |");
    }
    s.push_str("\n|---|");
    for _ in 0..g.datasets.len() + usize::from(g.has_superiority) {
        s.push_str("---|");
    }
    s.push('\n');
    for r in &g.rows {
        write!(s, "| {} |", r.method).unwrap();
        for c in &r.cells {
            match c {
                Some(c) => write!(s, " {:.2}±{:.2} |", c.mean, c.std).unwrap(),
                None => s.push_str(" - |"),
            }
        }
        if g.has_superiority {
            match r.superiority {
                Some(n) => write!(s, " {n} |").unwrap(),
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s
}

/// One (communication, accuracy) point of a cost sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostPoint {
    pub scenario: String,
    pub method: String,
    pub dataset: String,
    /// `prompts` or `tokens`.
    pub sweep: String,
    pub setting: usize,
    pub params_millions: f64,
    pub accuracy: f64,
}

/// Pairs `cost_<variant>` with `acc_<variant>`, sorted by cost within each
/// (scenario, method, dataset, sweep) series.
pub fn cost_points(table: &MetricTable) -> Vec<CostPoint> {
    let mut points = Vec::new();
    for r in table.rows.iter().filter(|r| r.metric.starts_with("cost_")) {
        let variant = &r.metric["cost_".len()..];
        let Some(acc) = table.get(&r.scenario, &r.method, &r.dataset, &format!("acc_{variant}")) else {
            continue;
        };
        let split = variant.find(|c: char| c.is_ascii_digit()).unwrap_or(variant.len());
        let (sweep, setting) = variant.split_at(split);
        points.push(CostPoint {
            scenario: r.scenario.clone(),
            method: r.method.clone(),
            dataset: r.dataset.clone(),
            sweep: sweep.to_string(),
            setting: setting.parse().unwrap_or(0),
            params_millions: r.cell.mean,
            accuracy: acc.mean,
        });
    }
    points.sort_by(|a, b| {
        (&a.scenario, &a.method, &a.dataset, &a.sweep)
            .cmp(&(&b.scenario, &b.method, &b.dataset, &b.sweep))
            .then(a.params_millions.total_cmp(&b.params_millions))
    });
    points
}

/// Writes `report.md` (and `cost_tradeoff.csv` when a cost sweep ran) into
/// `dir`; returns the report text.
pub fn write_report(dir: &Path) -> Result<String, CliError> {
    let obs = read_observations(dir)?;
    let table = MetricTable::from_observations(&obs)?;
    let mut text = String::from("# Results\n");
    for g in build_grids(&table) {
        text.push('\n');
        text.push_str(&render_grid(&g));
    }
    let points = cost_points(&table);
    if !points.is_empty() {
        let mut w = csv::Writer::from_path(dir.join(COST_PLOT))?;
        for p in &points {
            w.serialize(p)?;
        }
        w.flush()?;
        writeln!(text, "\nCost trade-off series: {COST_PLOT}").unwrap();
    }
    std::fs::write(dir.join(REPORT), &text)?;
    Ok(text)
}
