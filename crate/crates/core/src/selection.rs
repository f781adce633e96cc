//! Offline selection of opportunistic workers and the end-to-end strategies.
//!
//! The greedy adds, one worker per step, the candidate with the largest
//! weighted gain in completion probability and records every prefix as a
//! snapshot. HyTasker pays for the snapshot whose Monte-Carlo estimate (its
//! own coverage plus an online assignment on the leftover budget) is best.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::{entropy_weights, EntropyError, TaskWeights, TowerVisitCounts, DEFAULT_EPSILON};
use crate::flow::DEFAULT_NEIGHBOR_CAP;
use crate::mobility::{build_profile, visit_probability, MobilityError, MobilityProfile};
use crate::model::{
    validate_instance, AllocationResult, BudgetParams, Instance, Task, TowerId, Violation, WorkerId,
};
use crate::montecarlo::{completion_from_alphas, EstimateError, EstimationConfig, Simulator, DEFAULT_ROUNDS};
use crate::replay::{remaining_budget, Replay, ReplayError};

/// How task weights are derived from participatory histories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightMode {
    /// Inverse location entropy.
    Entropy,
    Equal,
    /// Inverse total visits.
    VisitFrequency,
}

impl WeightMode {
    pub fn weights(self, instance: &Instance, epsilon: f64) -> Result<TaskWeights, EntropyError> {
        let days = instance.training_days;
        match self {
            WeightMode::Entropy => {
                entropy_weights(&instance.tasks, &instance.participatory, days, epsilon)
            }
            WeightMode::Equal => TaskWeights::equal(&instance.tasks),
            WeightMode::VisitFrequency => TaskWeights::visit_frequency(
                &instance.tasks,
                &TowerVisitCounts::from_participatory(&instance.participatory, days),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Number of workers, from 1.
    pub ordinal: usize,
    /// In selection order.
    pub workers: Vec<WorkerId>,
    pub utility: f64,
    pub estimate: Option<f64>,
}

/// Weighted expected number of tasks the set completes.
pub fn utility(
    selected: &[WorkerId],
    weights: &TaskWeights,
    profile: &MobilityProfile,
    tasks: &[Task],
) -> f64 {
    tasks
        .iter()
        .map(|t| {
            let phi = completion_from_alphas(
                selected.iter().map(|&w| visit_probability(profile, w, t.tower)),
            );
            weights.get(t.id) * phi
        })
        .sum()
}

/// Greedy prefixes: `min(⌊B/I_c⌋, |candidates|)` snapshots, the k-th holding
/// the first k picks. Ties go to the lowest worker id.
pub fn greedy_snapshots(
    candidates: &[WorkerId],
    budget: &BudgetParams,
    weights: &TaskWeights,
    profile: &MobilityProfile,
    tasks: &[Task],
) -> Vec<Snapshot> {
    let mut ids: Vec<WorkerId> = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let steps = budget.max_opportunistic().min(ids.len());

    // Gains are compared on weights relative to the largest, so uniform
    // rescaling of the weights leaves the greedy path unchanged.
    let top = tasks.iter().map(|t| weights.get(t.id)).fold(0.0, f64::max);
    let mut tower_slot: HashMap<TowerId, usize> = HashMap::new();
    let mut tower_weight: Vec<f64> = Vec::new();
    let mut task_slot = Vec::with_capacity(tasks.len());
    for t in tasks {
        let next = tower_slot.len();
        let slot = *tower_slot.entry(t.tower).or_insert(next);
        if slot == tower_weight.len() {
            tower_weight.push(0.0);
        }
        if top > 0.0 {
            tower_weight[slot] += weights.get(t.id) / top;
        }
        task_slot.push(slot);
    }
    let reach: Vec<Vec<(usize, f64)>> = ids
        .iter()
        .map(|&w| {
            profile
                .worker_rates(w)
                .filter_map(|(t, _)| {
                    tower_slot
                        .get(&t)
                        .map(|&s| (s, visit_probability(profile, w, t)))
                })
                .collect()
        })
        .collect();

    let mut miss = vec![1.0; tower_weight.len()];
    let mut taken = vec![false; ids.len()];
    let mut order = Vec::with_capacity(steps);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in reach.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let gain: f64 = r.iter().map(|&(s, a)| tower_weight[s] * miss[s] * a).sum();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (pick, _) = best.expect("steps never exceed candidates");
        taken[pick] = true;
        for &(s, a) in &reach[pick] {
            miss[s] *= 1.0 - a;
        }
        order.push(ids[pick]);
        let u = tasks
            .iter()
            .zip(&task_slot)
            .map(|(t, &s)| weights.get(t.id) * (1.0 - miss[s]))
            .sum();
        out.push(Snapshot {
            ordinal: order.len(),
            workers: order.clone(),
            utility: u,
            estimate: None,
        });
    }
    out
}

/// Index of the largest estimate; the earliest wins ties.
pub fn choose_snapshot(estimates: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &e) in estimates.iter().enumerate() {
        if best.is_none_or(|(_, b)| e > b) {
            best = Some((i, e));
        }
    }
    best.map(|(i, _)| i)
}

/// Estimates every snapshot against the leftover budget and returns the
/// index of the chosen one, or `None` when there are no snapshots.
pub fn select_opportunistic(
    snapshots: &mut [Snapshot],
    budget: &BudgetParams,
    simulator: &Simulator<'_>,
) -> Option<usize> {
    let sets: Vec<(Vec<WorkerId>, f64)> = snapshots
        .iter()
        .map(|s| {
            let spent = budget.opp_reward * s.workers.len() as f64;
            (s.workers.clone(), remaining_budget(budget.total, spent))
        })
        .collect();
    let estimates = simulator.estimate_many(&sets);
    for (s, e) in snapshots.iter_mut().zip(&estimates) {
        s.estimate = Some(*e);
    }
    choose_snapshot(&estimates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "hytasker")]
    HyTasker,
    #[serde(rename = "opp")]
    Opp,
    #[serde(rename = "par")]
    Par,
    #[serde(rename = "bphybrid")]
    BpHybrid,
    #[serde(rename = "hytasker-equal")]
    HyTaskerEqual,
    #[serde(rename = "hytasker-visitfreq")]
    HyTaskerVisitFreq,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::HyTasker,
        Strategy::Opp,
        Strategy::Par,
        Strategy::BpHybrid,
        Strategy::HyTaskerEqual,
        Strategy::HyTaskerVisitFreq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::HyTasker => "hytasker",
            Strategy::Opp => "opp",
            Strategy::Par => "par",
            Strategy::BpHybrid => "bphybrid",
            Strategy::HyTaskerEqual => "hytasker-equal",
            Strategy::HyTaskerVisitFreq => "hytasker-visitfreq",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown strategy {0:?}")]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownStrategy(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub rounds: u32,
    /// Drives estimation rounds, online acceptance and the hybrid baseline's splits.
    pub seed: u64,
    pub neighbor_cap: usize,
    pub epsilon: f64,
    /// The online phase runs this long before the last sensing deadline.
    pub online_lead_seconds: i64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rounds: DEFAULT_ROUNDS,
            seed: 0,
            neighbor_cap: DEFAULT_NEIGHBOR_CAP,
            epsilon: DEFAULT_EPSILON,
            online_lead_seconds: 3600,
        }
    }
}

/// The greedy record behind a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OfflineTrace {
    pub snapshots: Vec<Snapshot>,
    /// Index into `snapshots` of the paid one.
    pub chosen: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub result: AllocationResult,
    pub trace: OfflineTrace,
}

#[derive(Debug, Error, PartialEq)]
pub enum RunError {
    #[error("invalid instance: {}", list(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// ChaCha stream for the hybrid baseline's budget splits.
const SPLIT_STREAM: u64 = u64::MAX - 1;

/// Training-window profile over every candidate of both kinds.
pub fn training_profile(instance: &Instance) -> Result<MobilityProfile, MobilityError> {
    let days = instance.training_days;
    let records = instance
        .opportunistic
        .iter()
        .flat_map(|w| &w.history)
        .chain(instance.participatory.iter().flat_map(|w| &w.history))
        .filter(|r| r.day < days);
    build_profile(records, days)
}

struct Prepared<'a> {
    profile: MobilityProfile,
    replay_cfg: (i64, usize, u64),
    instance: &'a Instance,
}

impl<'a> Prepared<'a> {
    /// `None` when there is nothing to spend or nothing to do.
    fn new(instance: &'a Instance, cfg: &RunConfig) -> Result<Option<Self>, RunError> {
        let bad: Vec<Violation> = validate_instance(instance)
            .into_iter()
            .filter(|v| {
                !matches!(
                    v,
                    Violation::NonPositiveBudget("total", _) | Violation::RewardExceedsBudget { .. }
                )
            })
            .collect();
        if !bad.is_empty() {
            return Err(RunError::Invalid(bad));
        }
        if instance.budget.total.is_nan() || instance.budget.total <= 0.0 || instance.tasks.is_empty() {
            return Ok(None);
        }
        Ok(Some(Prepared {
            profile: training_profile(instance)?,
            replay_cfg: (cfg.online_lead_seconds, cfg.neighbor_cap, cfg.seed),
            instance,
        }))
    }

    fn replay(&self) -> Result<Replay<'a>, RunError> {
        let (lead, cap, seed) = self.replay_cfg;
        Ok(Replay::new(self.instance, &self.profile, lead, cap, seed)?)
    }

    fn candidates(&self) -> Vec<WorkerId> {
        self.instance.opportunistic.iter().map(|w| w.id).collect()
    }
}

fn empty_outcome() -> RunOutcome {
    RunOutcome {
        result: AllocationResult::default(),
        trace: OfflineTrace::default(),
    }
}

fn seconds(since: Instant) -> f64 {
    since.elapsed().as_secs_f64()
}

/// Runs one strategy end to end and scores it on the held-out day.
pub fn run_strategy(
    strategy: Strategy,
    instance: &Instance,
    cfg: &RunConfig,
) -> Result<RunOutcome, RunError> {
    match strategy {
        Strategy::HyTasker => run_hytasker(instance, cfg, WeightMode::Entropy),
        Strategy::HyTaskerEqual => run_hytasker(instance, cfg, WeightMode::Equal),
        Strategy::HyTaskerVisitFreq => run_hytasker(instance, cfg, WeightMode::VisitFrequency),
        Strategy::Opp => run_opp(instance, cfg, WeightMode::Equal),
        Strategy::Par => run_par(instance, cfg),
        Strategy::BpHybrid => run_bp_hybrid(instance, cfg),
    }
}

pub fn run_hytasker(
    instance: &Instance,
    cfg: &RunConfig,
    mode: WeightMode,
) -> Result<RunOutcome, RunError> {
    let Some(prep) = Prepared::new(instance, cfg)? else {
        return Ok(empty_outcome());
    };
    let budget = instance.budget;
    let start = Instant::now();
    let weights = mode.weights(instance, cfg.epsilon)?;
    let mut snapshots = greedy_snapshots(
        &prep.candidates(),
        &budget,
        &weights,
        &prep.profile,
        &instance.tasks,
    );
    let est = EstimationConfig {
        rounds: cfg.rounds,
        seed: cfg.seed,
    };
    let simulator = Simulator::new(instance, &prep.profile, cfg.neighbor_cap, est)?;
    let chosen = select_opportunistic(&mut snapshots, &budget, &simulator);
    let offline = seconds(start);

    let start = Instant::now();
    let selected: BTreeSet<WorkerId> = chosen
        .map(|i| snapshots[i].workers.iter().copied().collect())
        .unwrap_or_default();
    let mut result = prep.replay()?.evaluate(&selected, true);
    result.estimated_completed = match chosen {
        Some(i) => snapshots[i].estimate,
        None => Some(simulator.estimate(&[], remaining_budget(budget.total, 0.0))),
    };
    result.wall_clock.insert("offline".into(), offline);
    result.wall_clock.insert("online".into(), seconds(start));
    Ok(RunOutcome {
        result,
        trace: OfflineTrace { snapshots, chosen },
    })
}

/// Greedy on the whole budget, last snapshot paid, no online phase.
pub fn run_opp(
    instance: &Instance,
    cfg: &RunConfig,
    mode: WeightMode,
) -> Result<RunOutcome, RunError> {
    let Some(prep) = Prepared::new(instance, cfg)? else {
        return Ok(empty_outcome());
    };
    let start = Instant::now();
    let weights = mode.weights(instance, cfg.epsilon)?;
    let snapshots = greedy_snapshots(
        &prep.candidates(),
        &instance.budget,
        &weights,
        &prep.profile,
        &instance.tasks,
    );
    let chosen = snapshots.len().checked_sub(1);
    let offline = seconds(start);
    let start = Instant::now();
    let selected: BTreeSet<WorkerId> = snapshots
        .last()
        .map(|s| s.workers.iter().copied().collect())
        .unwrap_or_default();
    let mut result = prep.replay()?.evaluate(&selected, false);
    result.wall_clock.insert("offline".into(), offline);
    result.wall_clock.insert("online".into(), seconds(start));
    Ok(RunOutcome {
        result,
        trace: OfflineTrace { snapshots, chosen },
    })
}

/// Whole budget spent online at the online time.
pub fn run_par(instance: &Instance, cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    let Some(prep) = Prepared::new(instance, cfg)? else {
        return Ok(empty_outcome());
    };
    let start = Instant::now();
    let mut result = prep.replay()?.evaluate(&BTreeSet::new(), true);
    result.wall_clock.insert("offline".into(), 0.0);
    result.wall_clock.insert("online".into(), seconds(start));
    Ok(RunOutcome {
        result,
        trace: OfflineTrace::default(),
    })
}

/// Random budget splits: a fraction `f` pays equal-weight greedy picks and
/// `(1 - f) B` funds the online phase. The split completing the most tasks on
/// the held-out day is reported.
///
/// Runs `max(1, ⌊B/I_c⌋)` rounds; the first round wins ties.
pub fn run_bp_hybrid(instance: &Instance, cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    let Some(prep) = Prepared::new(instance, cfg)? else {
        return Ok(empty_outcome());
    };
    let budget = instance.budget;
    let start = Instant::now();
    let weights = WeightMode::Equal.weights(instance, cfg.epsilon)?;
    // the greedy path does not depend on the budget, so a split's selection
    // is a prefix of the full-budget path
    let snapshots = greedy_snapshots(
        &prep.candidates(),
        &budget,
        &weights,
        &prep.profile,
        &instance.tasks,
    );
    let replay = prep.replay()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SPLIT_STREAM);
    let rounds = budget.max_opportunistic().max(1);
    let mut best: Option<(AllocationResult, Option<usize>)> = None;
    for _ in 0..rounds {
        let fraction: f64 = rng.random();
        let opp_budget = BudgetParams {
            total: fraction * budget.total,
            ..budget
        };
        let k = opp_budget.max_opportunistic().min(snapshots.len());
        let selected: BTreeSet<WorkerId> = match k {
            0 => BTreeSet::new(),
            k => snapshots[k - 1].workers.iter().copied().collect(),
        };
        // the online phase gets its share even when whole rewards leave part
        // of the opportunistic share unspent
        let travel = remaining_budget(budget.total, opp_budget.total);
        let result = replay.evaluate_split(&selected, Some(travel));
        let better = best
            .as_ref()
            .is_none_or(|(b, _)| result.completed_tasks.len() > b.completed_tasks.len());
        if better {
            best = Some((result, k.checked_sub(1)));
        }
    }
    let (mut result, chosen) = best.expect("at least one round");
    result.wall_clock.insert("offline".into(), seconds(start));
    result.wall_clock.insert("online".into(), 0.0);
    Ok(RunOutcome {
        result,
        trace: OfflineTrace { snapshots, chosen },
    })
}
