//! Parameter sweeps over seeded instances and their CSV and JSON output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{
    instance_from_traces, parse_records, parse_towers, synth_instance, DataError,
    PopulationParams, SynthParams, SENSING_END_SECS, SENSING_START_SECS,
};
use crate::model::{BudgetParams, ConnectionRecord, Instance, Tower};
use crate::selection::{run_strategy, RunConfig, RunError, Strategy};
use crate::flow::tour::MAX_TOUR_POINTS as MAX_SET_SIZE;

pub const CONFIG_SCHEMA: u32 = 1;

pub const CSV_HEADER: &str = "strategy,seed,budget,num_tasks,num_workers,gamma,mu,completed,\
opp_count,opp_spend,par_spend,estimate,offline_ms,online_ms";

/// Where a cell's instance comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    Synthetic {
        num_towers: u32,
        area_km: f64,
        activity: f64,
        sparse_west: bool,
    },
    /// Tower and connection CSVs; `num_workers` subsamples their users.
    Traces { towers: PathBuf, records: PathBuf },
}

impl Default for InstanceSource {
    fn default() -> Self {
        let s = SynthParams::default();
        InstanceSource::Synthetic {
            num_towers: s.num_towers,
            area_km: s.area_km,
            activity: s.activity,
            sparse_west: s.sparse_west,
        }
    }
}

/// A sweep: every combination of the axis values, for every seed and strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub strategies: Vec<Strategy>,
    pub budget: Vec<f64>,
    pub num_tasks: Vec<u32>,
    pub num_workers: Vec<u32>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub seeds: Vec<u64>,
    pub online_lead_seconds: i64,
    pub rounds: u32,
    pub neighbor_cap: usize,
    pub epsilon: f64,
    pub sigma_accept: f64,
    pub training_days: u32,
    pub opp_reward: f64,
    pub per_km: f64,
    /// Fill the timing columns; off keeps reruns byte-identical.
    pub record_timing: bool,
    pub source: InstanceSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let run = RunConfig::default();
        let pop = SynthParams::default().population;
        ExperimentConfig {
            schema: CONFIG_SCHEMA,
            strategies: vec![Strategy::HyTasker],
            budget: vec![pop.budget.total],
            num_tasks: vec![pop.num_tasks],
            num_workers: vec![SynthParams::default().num_workers],
            gamma: vec![pop.gamma],
            mu: vec![pop.mu_accept],
            seeds: vec![0],
            online_lead_seconds: run.online_lead_seconds,
            rounds: run.rounds,
            neighbor_cap: run.neighbor_cap,
            epsilon: run.epsilon,
            sigma_accept: pop.sigma_accept,
            training_days: pop.training_days,
            opp_reward: pop.budget.opp_reward,
            per_km: pop.budget.per_km,
            record_timing: false,
            source: InstanceSource::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("seed {seed}, {strategy}: {source}")]
    Run {
        strategy: Strategy,
        seed: u64,
        source: RunError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// One swept combination of axis values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub budget: f64,
    pub num_tasks: u32,
    pub num_workers: u32,
    pub gamma: f64,
    pub mu: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        if self.schema != CONFIG_SCHEMA {
            return fail(format!("schema {} is not supported", self.schema));
        }
        let lists = [
            ("strategies", self.strategies.len()),
            ("budget", self.budget.len()),
            ("num_tasks", self.num_tasks.len()),
            ("num_workers", self.num_workers.len()),
            ("gamma", self.gamma.len()),
            ("mu", self.mu.len()),
            ("seeds", self.seeds.len()),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, n)| *n == 0) {
            return fail(format!("{name} must list at least one value"));
        }
        if let Some(b) = self.budget.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return fail(format!("budget {b} must be finite and non-negative"));
        }
        if self.num_tasks.contains(&0) || self.num_workers.contains(&0) {
            return fail("task and worker counts must be at least 1".into());
        }
        if let Some(g) = self.gamma.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
            return fail(format!("gamma {g} must lie strictly between 0 and 1"));
        }
        if let Some(m) = self.mu.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return fail(format!("mu {m} must lie in [0, 1]"));
        }
        let period = SENSING_END_SECS - SENSING_START_SECS;
        if !(0..period).contains(&self.online_lead_seconds) {
            return fail(format!(
                "online_lead_seconds must lie in [0, {period}), got {}",
                self.online_lead_seconds
            ));
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if self.neighbor_cap < MAX_SET_SIZE {
            return fail(format!(
                "neighbor_cap must be at least {MAX_SET_SIZE}, the largest per-worker task limit"
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail("epsilon must be positive".into());
        }
        if !(self.sigma_accept >= 0.0 && self.sigma_accept.is_finite()) {
            return fail("sigma_accept must be finite and non-negative".into());
        }
        if self.training_days == 0 {
            return fail("training_days must be at least 1".into());
        }
        if !(self.opp_reward > 0.0 && self.opp_reward.is_finite()) {
            return fail("opp_reward must be positive".into());
        }
        if !(self.per_km > 0.0 && self.per_km.is_finite()) {
            return fail("per_km must be positive".into());
        }
        if let InstanceSource::Synthetic {
            num_towers,
            area_km,
            activity,
            ..
        } = self.source
        {
            if num_towers == 0 || !(area_km > 0.0 && area_km.is_finite()) {
                return fail("synthetic source needs towers and a positive area".into());
            }
            if !(activity > 0.0 && activity.is_finite()) {
                return fail("synthetic activity must be positive".into());
            }
        }
        Ok(())
    }

    /// Axis combinations in output order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &budget in &self.budget {
            for &num_tasks in &self.num_tasks {
                for &num_workers in &self.num_workers {
                    for &gamma in &self.gamma {
                        for &mu in &self.mu {
                            out.push(Cell {
                                budget,
                                num_tasks,
                                num_workers,
                                gamma,
                                mu,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            rounds: self.rounds,
            seed,
            neighbor_cap: self.neighbor_cap,
            epsilon: self.epsilon,
            online_lead_seconds: self.online_lead_seconds,
        }
    }

    pub fn population(&self, cell: &Cell, seed: u64) -> PopulationParams {
        PopulationParams {
            num_tasks: cell.num_tasks,
            gamma: cell.gamma,
            mu_accept: cell.mu,
            sigma_accept: self.sigma_accept,
            training_days: self.training_days,
            budget: BudgetParams {
                total: cell.budget,
                opp_reward: self.opp_reward,
                per_km: self.per_km,
            },
            seed,
        }
    }
}

/// Builds the instances of a sweep; trace files are read once.
#[derive(Debug, Clone)]
pub enum InstanceFactory {
    Synthetic {
        num_towers: u32,
        area_km: f64,
        activity: f64,
        sparse_west: bool,
    },
    Traces {
        towers: Vec<Tower>,
        records: Vec<ConnectionRecord>,
    },
}

fn read(path: &Path) -> Result<Vec<u8>, ExperimentError> {
    std::fs::read(path).map_err(|source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    })
}

impl InstanceFactory {
    pub fn load(source: &InstanceSource) -> Result<Self, ExperimentError> {
        Ok(match source {
            &InstanceSource::Synthetic {
                num_towers,
                area_km,
                activity,
                sparse_west,
            } => InstanceFactory::Synthetic {
                num_towers,
                area_km,
                activity,
                sparse_west,
            },
            InstanceSource::Traces { towers, records } => {
                let towers = parse_towers(&read(towers)?)?;
                let records = parse_records(&read(records)?, &towers)?;
                InstanceFactory::Traces { towers, records }
            }
        })
    }

    pub fn instance(&self, num_workers: u32, pop: &PopulationParams) -> Result<Instance, DataError> {
        match self {
            &InstanceFactory::Synthetic {
                num_towers,
                area_km,
                activity,
                sparse_west,
            } => synth_instance(&SynthParams {
                num_towers,
                num_workers,
                area_km,
                activity,
                sparse_west,
                population: *pop,
            }),
            InstanceFactory::Traces { towers, records } => {
                instance_from_traces(towers.clone(), records.clone(), Some(num_workers), pop)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub budget: f64,
    pub num_tasks: u32,
    pub num_workers: u32,
    pub gamma: f64,
    pub mu: f64,
    pub completed: usize,
    pub opp_count: usize,
    pub opp_spend: f64,
    pub par_spend: f64,
    /// Offline estimate at the chosen snapshot, for strategies that make one.
    pub estimate: Option<f64>,
    pub offline_ms: Option<f64>,
    pub online_ms: Option<f64>,
}

impl ResultRow {
    pub fn within_budget(&self) -> bool {
        self.opp_spend + self.par_spend <= self.budget
    }
}

/// Runs every (cell, seed, strategy) combination on up to `jobs` threads.
/// Rows come back in (cell, seed, strategy) order whatever the scheduling.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<ResultRow>, ExperimentError> {
    cfg.validate()?;
    let factory = InstanceFactory::load(&cfg.source)?;
    let units: Vec<(Cell, u64)> = cfg
        .cells()
        .into_iter()
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let blocks: Vec<Result<Vec<ResultRow>, ExperimentError>> = pool.install(|| {
        units
            .par_iter()
            .map(|(cell, seed)| run_unit(cfg, &factory, cell, *seed))
            .collect()
    });
    let mut rows = Vec::new();
    for b in blocks {
        rows.extend(b?);
    }
    Ok(rows)
}

fn run_unit(
    cfg: &ExperimentConfig,
    factory: &InstanceFactory,
    cell: &Cell,
    seed: u64,
) -> Result<Vec<ResultRow>, ExperimentError> {
    let instance = factory.instance(cell.num_workers, &cfg.population(cell, seed))?;
    let run = cfg.run_config(seed);
    cfg.strategies
        .iter()
        .map(|&strategy| {
            let outcome = run_strategy(strategy, &instance, &run).map_err(|source| {
                ExperimentError::Run {
                    strategy,
                    seed,
                    source,
                }
            })?;
            let r = outcome.result;
            let ms = |phase: &str| {
                cfg.record_timing
                    .then(|| r.wall_clock.get(phase).copied().unwrap_or(0.0) * 1000.0)
            };
            Ok(ResultRow {
                strategy,
                seed,
                budget: cell.budget,
                num_tasks: cell.num_tasks,
                num_workers: cell.num_workers,
                gamma: cell.gamma,
                mu: cell.mu,
                completed: r.completed_tasks.len(),
                opp_count: r.selected_opportunistic.len(),
                opp_spend: r.opp_spend,
                par_spend: r.par_spend,
                estimate: r.estimated_completed,
                offline_ms: ms("offline"),
                online_ms: ms("online"),
            })
        })
        .collect()
}

pub fn results_csv(rows: &[ResultRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to memory");
    }
    let mut out = format!("{CSV_HEADER}\n").into_bytes();
    out.extend(w.into_inner().expect("in-memory writer"));
    out
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryGroup {
    pub strategy: Strategy,
    pub budget: f64,
    pub num_tasks: u32,
    pub num_workers: u32,
    pub gamma: f64,
    pub mu: f64,
    pub runs: usize,
    pub completed_mean: f64,
    pub completed_std: f64,
    pub offline_ms_mean: Option<f64>,
    pub offline_ms_std: Option<f64>,
}

/// Statistics over seeds for each strategy and swept combination, in first
/// appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryGroup> {
    type Key = (Strategy, [u64; 3], u32, u32);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.strategy,
            [r.budget.to_bits(), r.gamma.to_bits(), r.mu.to_bits()],
            r.num_tasks,
            r.num_workers,
        );
        let g = groups.entry(key).or_default();
        if g.is_empty() {
            order.push(key);
        }
        g.push(r);
    }
    order
        .iter()
        .map(|k| {
            let g = &groups[k];
            let done: Vec<f64> = g.iter().map(|r| r.completed as f64).collect();
            let (completed_mean, completed_std) = mean_std(&done);
            let times: Option<Vec<f64>> = g.iter().map(|r| r.offline_ms).collect();
            let t = times.map(|t| mean_std(&t));
            SummaryGroup {
                strategy: g[0].strategy,
                budget: g[0].budget,
                num_tasks: g[0].num_tasks,
                num_workers: g[0].num_workers,
                gamma: g[0].gamma,
                mu: g[0].mu,
                runs: g.len(),
                completed_mean,
                completed_std,
                offline_ms_mean: t.map(|t| t.0),
                offline_ms_std: t.map(|t| t.1),
            }
        })
        .collect()
}

pub fn summary_json(rows: &[ResultRow]) -> String {
    #[derive(Serialize)]
    struct Summary {
        schema: u32,
        groups: Vec<SummaryGroup>,
    }
    serde_json::to_string_pretty(&Summary {
        schema: CONFIG_SCHEMA,
        groups: summarize(rows),
    })
    .expect("summary serializes")
}

/// The summary written next to a results file: `results.csv` pairs with
/// `results.summary.json`.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("summary.json")
}

/// Writes the CSV and its summary.
pub fn emit_results(rows: &[ResultRow], csv_path: &Path) -> Result<(), ExperimentError> {
    let write = |path: &Path, bytes: &[u8]| {
        std::fs::write(path, bytes).map_err(|source| ExperimentError::Io {
            path: path.to_owned(),
            source,
        })
    };
    write(csv_path, &results_csv(rows))?;
    write(&summary_path(csv_path), summary_json(rows).as_bytes())
}
