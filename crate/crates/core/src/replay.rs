//! Ground-truth evaluation on the held-out sensing day.
//!
//! A selected opportunistic worker completes every task at a tower it
//! connects to within the task's sensing window. At the online time, open
//! tasks go to the participatory workers that accept, each standing at its
//! reported tower; assigned tasks count as completed.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::flow::{self, FlowError, OnlineAssignment, OnlineWorker, OpenTask, WorkerOptions};
use crate::mobility::{most_frequent_tower, MobilityError, MobilityProfile};
use crate::model::{
    AllocationResult, Instance, OnlinePair, Point, TaskId, TowerId, WorkerId,
};

/// Largest travel budget that keeps `spent + travel <= total` after rounding.
pub fn remaining_budget(total: f64, spent: f64) -> f64 {
    let mut left = total - spent;
    while left > 0.0 && spent + left > total {
        left -= total.abs().max(1.0) * f64::EPSILON;
    }
    left.max(0.0)
}

/// Held-out-day facts shared by every strategy evaluated on one instance.
#[derive(Debug, Clone)]
pub struct Replay<'a> {
    instance: &'a Instance,
    /// Held-out connections of each opportunistic worker: (tower, timestamp).
    visits: HashMap<WorkerId, Vec<(TowerId, i64)>>,
    tasks_at: HashMap<TowerId, Vec<usize>>,
    online_at: i64,
    /// Accepting participatory workers at their online positions.
    online: Vec<OnlineWorker>,
    neighbor_cap: usize,
}

impl<'a> Replay<'a> {
    /// `seed` drives the acceptance draws (one per participatory worker, in
    /// instance order) and the position of workers without history.
    pub fn new(
        instance: &'a Instance,
        profile: &MobilityProfile,
        lead_seconds: i64,
        neighbor_cap: usize,
        seed: u64,
    ) -> Result<Self, ReplayError> {
        let day = instance.held_out_day();
        let visits = instance
            .opportunistic
            .iter()
            .map(|w| {
                let v = w
                    .history
                    .iter()
                    .filter(|r| r.day == day)
                    .map(|r| (r.tower, r.timestamp))
                    .collect();
                (w.id, v)
            })
            .collect();
        let mut tasks_at: HashMap<TowerId, Vec<usize>> = HashMap::new();
        for (i, t) in instance.tasks.iter().enumerate() {
            tasks_at.entry(t.tower).or_default().push(i);
        }
        let online_at = instance.sensing_end().unwrap_or(0) - lead_seconds;

        let points: BTreeMap<TowerId, Point> = instance.tower_points();
        let tower_ids: Vec<TowerId> = points.keys().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(REPLAY_STREAM);
        let mut online = Vec::new();
        for p in &instance.participatory {
            if neighbor_cap < p.max_tasks as usize {
                return Err(FlowError::NeighborCap {
                    worker: p.id,
                    cap: neighbor_cap,
                    max_tasks: p.max_tasks,
                }
                .into());
            }
            let at = match p.online_position {
                Some(t) => t,
                None => most_frequent_tower(profile, p.id, &tower_ids, &mut rng)?,
            };
            let accepts = rng.random::<f64>() < p.acceptance_rate;
            let position = *points.get(&at).ok_or(ReplayError::UnknownTower(at))?;
            if accepts {
                online.push(OnlineWorker {
                    id: p.id,
                    position,
                    region: p.region,
                    max_tasks: p.max_tasks,
                    acceptance_rate: p.acceptance_rate,
                });
            }
        }
        Ok(Replay {
            instance,
            visits,
            tasks_at,
            online_at,
            online,
            neighbor_cap,
        })
    }

    /// The moment the online assignment runs.
    pub fn online_at(&self) -> i64 {
        self.online_at
    }

    /// Tasks completed by `selected` through connections no later than `until`.
    pub fn opportunistic_completions(
        &self,
        selected: &BTreeSet<WorkerId>,
        until: i64,
    ) -> BTreeSet<TaskId> {
        let mut done = BTreeSet::new();
        for w in selected {
            for &(tower, ts) in self.visits.get(w).into_iter().flatten() {
                for &i in self.tasks_at.get(&tower).into_iter().flatten() {
                    let t = &self.instance.tasks[i];
                    if ts >= t.sensing_start && ts <= t.sensing_end && ts <= until {
                        done.insert(t.id);
                    }
                }
            }
        }
        done
    }

    /// Assigns tasks still open at the online time to accepting workers.
    pub fn assign_online(&self, closed: &BTreeSet<TaskId>, travel_budget: f64) -> OnlineAssignment {
        let points = self.instance.tower_points();
        let open: Vec<OpenTask> = self
            .instance
            .tasks
            .iter()
            .filter(|t| !closed.contains(&t.id) && t.sensing_end >= self.online_at)
            .map(|t| OpenTask {
                id: t.id,
                point: points[&t.tower],
            })
            .collect();
        let options: Vec<WorkerOptions> = self
            .online
            .iter()
            .map(|w| WorkerOptions::build(w, &open, self.neighbor_cap).expect("cap checked"))
            .collect();
        flow::solve(&options, &open, self.instance.budget.per_km, travel_budget, true)
    }

    /// Full outcome of paying `selected` and, when `online` is set, spending
    /// what is left of the budget on participatory workers.
    pub fn evaluate(&self, selected: &BTreeSet<WorkerId>, online: bool) -> AllocationResult {
        let budget = self.instance.budget;
        let opp_spend = budget.opp_reward * selected.len() as f64;
        let travel = online.then(|| remaining_budget(budget.total, opp_spend));
        self.evaluate_split(selected, travel)
    }

    /// Like [`Replay::evaluate`] with an explicit travel budget; `None` skips
    /// the online phase.
    pub fn evaluate_split(
        &self,
        selected: &BTreeSet<WorkerId>,
        travel_budget: Option<f64>,
    ) -> AllocationResult {
        let opp_spend = self.instance.budget.opp_reward * selected.len() as f64;
        let mut completed = self.opportunistic_completions(selected, i64::MAX);
        let mut result = AllocationResult {
            selected_opportunistic: selected.clone(),
            opp_spend,
            ..AllocationResult::default()
        };
        if let Some(travel) = travel_budget {
            let before = self.opportunistic_completions(selected, self.online_at);
            let a = self.assign_online(&before, travel);
            completed.extend(a.covered_tasks.iter().copied());
            result.par_spend = a.travel_spend;
            result.online_pairs = a
                .pairs
                .into_iter()
                .map(|(worker, set)| OnlinePair {
                    worker,
                    tasks: set.tasks,
                    tour_km: set.tour_km,
                })
                .collect();
        }
        result.completed_tasks = completed;
        result
    }
}

/// ChaCha stream reserved for online acceptance draws; estimation rounds use
/// streams from zero upward.
pub const REPLAY_STREAM: u64 = u64::MAX;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplayError {
    #[error("online position names unknown tower {0}")]
    UnknownTower(TowerId),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}
