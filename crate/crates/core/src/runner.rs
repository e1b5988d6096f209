//! Replicated runs, sweeps and policy searches.
//!
//! Run `i` of a batch always uses `derive_seed(master_seed, i)` and results
//! are folded in run-index order, so outputs never depend on the number of
//! worker threads. Every cell of a sweep reuses the same master seed, which
//! pairs runs across cells (common random numbers) and sharpens
//! comparisons between them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::derive_seed;
use crate::error::{Error, Result};
use crate::scenario::{normalized_value, parse_scenario_value, set_path, Scenario};
use crate::sim::{run_once, RunResult};
use crate::stats::{mean, quantile_sorted, std_dev, wilson_interval, Z95};

pub const DEFAULT_RUNS: u64 = 1000;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "PRESIM_WORKERS";

/// Per-run values kept by an [`Aggregate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSample {
    pub lost_fraction: f64,
    pub total_loss: bool,
    pub cost_storage: f64,
    pub cost_ingress: f64,
    pub cost_egress: f64,
}

impl From<&RunResult> for RunSample {
    fn from(r: &RunResult) -> Self {
        RunSample {
            lost_fraction: r.lost_fraction,
            total_loss: r.total_collection_loss,
            cost_storage: r.cost_storage,
            cost_ingress: r.cost_ingress,
            cost_egress: r.cost_egress,
        }
    }
}

/// Cross-run distribution summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_count: u64,
    pub mean_lost_fraction: f64,
    pub sd_lost_fraction: f64,
    pub min_lost_fraction: f64,
    pub max_lost_fraction: f64,
    pub q50: f64,
    pub q95: f64,
    pub q99: f64,
    pub p_total_loss: f64,
    pub p_total_loss_ci_lo: f64,
    pub p_total_loss_ci_hi: f64,
    pub mean_cost_storage: f64,
    pub mean_cost_ingress: f64,
    pub mean_cost_egress: f64,
}

impl Summary {
    pub fn mean_cost_total(&self) -> f64 {
        self.mean_cost_storage + self.mean_cost_ingress + self.mean_cost_egress
    }
}

/// Results of a batch of runs, in run-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Index of the first run in the batch.
    pub first_run: u64,
    pub samples: Vec<RunSample>,
}

impl Aggregate {
    pub fn run_count(&self) -> u64 {
        self.samples.len() as u64
    }

    pub fn lost_fractions(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.lost_fraction).collect()
    }

    pub fn total_losses(&self) -> u64 {
        self.samples.iter().filter(|s| s.total_loss).count() as u64
    }

    /// Quantile `q` of the lost fraction.
    pub fn loss_quantile(&self, q: f64) -> f64 {
        let mut xs = self.lost_fractions();
        xs.sort_by(f64::total_cmp);
        quantile_sorted(&xs, q)
    }

    /// Appends a batch that starts where this one ends.
    pub fn merge(mut self, other: Aggregate) -> Result<Aggregate> {
        if other.first_run != self.first_run + self.run_count() {
            return Err(Error::logic(format!(
                "cannot merge runs starting at {} after runs {}..{}",
                other.first_run,
                self.first_run,
                self.first_run + self.run_count()
            )));
        }
        self.samples.extend(other.samples);
        Ok(self)
    }

    pub fn summary(&self) -> Summary {
        let lost = self.lost_fractions();
        let mut sorted = lost.clone();
        sorted.sort_by(f64::total_cmp);
        let n = self.run_count();
        let total = self.total_losses();
        let (lo, hi) = wilson_interval(total, n, Z95);
        let col = |f: fn(&RunSample) -> f64| mean(&self.samples.iter().map(f).collect::<Vec<_>>());
        Summary {
            run_count: n,
            mean_lost_fraction: mean(&lost),
            sd_lost_fraction: std_dev(&lost),
            min_lost_fraction: sorted.first().copied().unwrap_or(f64::NAN),
            max_lost_fraction: sorted.last().copied().unwrap_or(f64::NAN),
            q50: quantile_sorted(&sorted, 0.5),
            q95: quantile_sorted(&sorted, 0.95),
            q99: quantile_sorted(&sorted, 0.99),
            p_total_loss: total as f64 / n as f64,
            p_total_loss_ci_lo: lo,
            p_total_loss_ci_hi: hi,
            mean_cost_storage: col(|s| s.cost_storage),
            mean_cost_ingress: col(|s| s.cost_ingress),
            mean_cost_egress: col(|s| s.cost_egress),
        }
    }
}

/// Worker count from the environment, else the number of CPUs.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::config("workers must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))
}

/// Runs `first_run .. first_run + n_runs` and returns every result.
pub fn run_results(
    scenario: &Scenario,
    first_run: u64,
    n_runs: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<RunResult>> {
    if n_runs == 0 {
        return Err(Error::config("runs must be >= 1"));
    }
    scenario.validate()?;
    let run = |i: u64| {
        let seed = derive_seed(master_seed, i);
        run_once(scenario, seed).map_err(|e| Error::Run {
            run_index: i,
            seed,
            source: Box::new(e),
        })
    };
    let range = first_run..first_run + n_runs;
    if workers == 1 {
        return range.map(run).collect();
    }
    // the first failure in run-index order is reported
    pool(workers)?.install(|| range.into_par_iter().map(run).collect())
}

/// Runs a batch and folds it into an [`Aggregate`].
pub fn run_range(scenario: &Scenario, first_run: u64, n_runs: u64, master_seed: u64, workers: usize) -> Result<Aggregate> {
    let results = run_results(scenario, first_run, n_runs, master_seed, workers)?;
    Ok(Aggregate {
        first_run,
        samples: results.iter().map(RunSample::from).collect(),
    })
}

pub fn run_replications(scenario: &Scenario, n_runs: u64, master_seed: u64, workers: usize) -> Result<Aggregate> {
    run_range(scenario, 0, n_runs, master_seed, workers)
}

/// Ordered parameter grid: `(dotted path, values)`. The first entry varies
/// slowest.
pub type Grid = Vec<(String, Vec<Value>)>;

/// Parses a grid given as a JSON object of path to value list. Key order
/// is preserved.
pub fn parse_grid(text: &str) -> Result<Grid> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::validation("grid", e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(Error::validation("grid", "expected an object of path -> list of values"));
    };
    map.into_iter()
        .map(|(k, v)| match v {
            Value::Array(vals) if !vals.is_empty() => Ok((k, vals)),
            Value::Array(_) => Err(Error::validation(format!("grid.{k}"), "value list is empty")),
            other => Ok((k, vec![other])),
        })
        .collect()
}

/// One scenario per grid cell.
#[derive(Debug, Clone)]
pub struct Cell {
    /// Canonical value of each swept parameter in this cell.
    pub params: Vec<Value>,
    pub scenario: Scenario,
}

fn lookup(root: &Value, path: &str) -> Value {
    let mut cur = root;
    for part in path.split('.') {
        let next = match cur {
            Value::Object(m) => m.get(part),
            Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get(i)),
            _ => None,
        };
        match next {
            Some(v) => cur = v,
            None => return Value::Null,
        }
    }
    cur.clone()
}

/// Expands a grid over `base` into cells in row order. Every path and value
/// is checked before anything runs.
pub fn expand_grid(base: &Scenario, grid: &Grid) -> Result<Vec<Cell>> {
    let root = normalized_value(base);
    for (path, values) in grid {
        if values.is_empty() {
            return Err(Error::validation(format!("grid.{path}"), "value list is empty"));
        }
        for v in values {
            let mut probe = root.clone();
            set_path(&mut probe, path, v.clone())?;
            parse_scenario_value(probe)?;
        }
    }
    let total: usize = grid.iter().map(|(_, v)| v.len()).product();
    let mut cells = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut picks = vec![0; grid.len()];
        for (k, (_, values)) in grid.iter().enumerate().rev() {
            picks[k] = rem % values.len();
            rem /= values.len();
        }
        let mut v = root.clone();
        for (k, (path, values)) in grid.iter().enumerate() {
            set_path(&mut v, path, values[picks[k]].clone())?;
        }
        let scenario = parse_scenario_value(v)?;
        let canonical = normalized_value(&scenario);
        let params = grid.iter().map(|(path, _)| lookup(&canonical, path)).collect();
        cells.push(Cell { params, scenario });
    }
    Ok(cells)
}

/// One aggregate per row, keyed by the swept values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub params: Vec<Value>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn single(summary: Summary) -> Table {
        Table {
            columns: Vec::new(),
            rows: vec![Row {
                params: Vec::new(),
                summary,
            }],
        }
    }
}

/// Runs every cell of `grid` over `base` and returns the aggregates.
pub fn sweep_aggregates(
    base: &Scenario,
    grid: &Grid,
    n_runs: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<(Cell, Aggregate)>> {
    let cells = expand_grid(base, grid)?;
    cells
        .into_iter()
        .map(|cell| {
            let agg = run_replications(&cell.scenario, n_runs, master_seed, workers)?;
            Ok((cell, agg))
        })
        .collect()
}

pub fn sweep(base: &Scenario, grid: &Grid, n_runs: u64, master_seed: u64, workers: usize) -> Result<Table> {
    let rows = sweep_aggregates(base, grid, n_runs, master_seed, workers)?
        .into_iter()
        .map(|(cell, agg)| Row {
            params: cell.params,
            summary: agg.summary(),
        })
        .collect();
    Ok(Table {
        columns: grid.iter().map(|(p, _)| p.clone()).collect(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SearchMode {
    /// Minimise loss subject to mean total cost <= budget.
    MinLoss { budget: f64 },
    /// Minimise mean total cost subject to loss <= target.
    MinCost { loss_target: f64 },
}

/// Loss statistic used for the constraint or objective: the mean, or a
/// quantile for risk-averse curators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossMeasure {
    Mean,
    Quantile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: Vec<Value>,
    pub summary: Summary,
    pub loss: f64,
    pub cost: f64,
    pub copies: usize,
    /// Shortest interval between integrity checks of any kind.
    pub check_interval: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub columns: Vec<String>,
    /// Every candidate, ranked best first (feasible ones ahead).
    pub frontier: Vec<Candidate>,
    /// Index into `frontier` of the chosen policy, if any is feasible.
    pub selected: Option<usize>,
    /// When nothing is feasible, the candidate closest to feasibility.
    pub best_effort: Option<usize>,
}

impl SearchOutcome {
    pub fn table(&self) -> Table {
        Table {
            columns: self.columns.clone(),
            rows: self
                .frontier
                .iter()
                .map(|c| Row {
                    params: c.params.clone(),
                    summary: c.summary,
                })
                .collect(),
        }
    }
}

fn rank(mode: SearchMode, a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    let primary = match mode {
        SearchMode::MinLoss { .. } => a.loss.total_cmp(&b.loss),
        SearchMode::MinCost { .. } => a.cost.total_cmp(&b.cost),
    };
    b.feasible
        .cmp(&a.feasible)
        .then(primary)
        .then(a.cost.total_cmp(&b.cost))
        .then(a.copies.cmp(&b.copies))
        .then(b.check_interval.total_cmp(&a.check_interval))
}

/// Evaluates every candidate policy and picks the best feasible one.
pub fn policy_search(
    base: &Scenario,
    candidates: &Grid,
    mode: SearchMode,
    measure: LossMeasure,
    n_runs: u64,
    master_seed: u64,
    workers: usize,
) -> Result<SearchOutcome> {
    if candidates.is_empty() {
        return Err(Error::validation("candidates", "candidate grid is empty"));
    }
    match mode {
        SearchMode::MinLoss { budget } if budget.is_nan() => {
            return Err(Error::validation("budget", "must be a number"))
        }
        SearchMode::MinCost { loss_target } if !(0.0..=1.0).contains(&loss_target) => {
            return Err(Error::validation("loss_target", "must lie in [0, 1]"))
        }
        _ => {}
    }
    if let LossMeasure::Quantile(q) = measure {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::validation("quantile", "must lie in [0, 1]"));
        }
    }
    let mut frontier: Vec<Candidate> = sweep_aggregates(base, candidates, n_runs, master_seed, workers)?
        .into_iter()
        .map(|(cell, agg)| {
            let summary = agg.summary();
            let loss = match measure {
                LossMeasure::Mean => summary.mean_lost_fraction,
                LossMeasure::Quantile(q) => agg.loss_quantile(q),
            };
            let cost = summary.mean_cost_total();
            let feasible = match mode {
                SearchMode::MinLoss { budget } => cost <= budget,
                SearchMode::MinCost { loss_target } => loss <= loss_target,
            };
            Candidate {
                params: cell.params,
                summary,
                loss,
                cost,
                copies: cell.scenario.target_copies,
                check_interval: cell.scenario.audit.detection_interval(),
                feasible,
            }
        })
        .collect();
    frontier.sort_by(|a, b| rank(mode, a, b));
    let selected = frontier.first().filter(|c| c.feasible).map(|_| 0);
    let best_effort = if selected.is_some() {
        None
    } else {
        // nearest to the violated constraint
        (0..frontier.len()).min_by(|&i, &j| {
            let (a, b) = (&frontier[i], &frontier[j]);
            let key = match mode {
                SearchMode::MinLoss { .. } => a.cost.total_cmp(&b.cost),
                SearchMode::MinCost { .. } => a.loss.total_cmp(&b.loss),
            };
            key.then(i.cmp(&j))
        })
    };
    Ok(SearchOutcome {
        columns: candidates.iter().map(|(p, _)| p.clone()).collect(),
        frontier,
        selected,
        best_effort,
    })
}
