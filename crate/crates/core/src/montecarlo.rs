//! Monte-Carlo estimate of how many tasks a set of opportunistic workers
//! plus an online participatory assignment would complete.
//!
//! Every round draws one scenario shared by all sets being compared: a
//! uniform per tower (a task is pre-completed when its draw falls below its
//! completion probability), then a location and an acceptance draw per
//! participatory worker. Round `r` uses ChaCha stream `r` of the configured
//! seed, so results do not depend on thread scheduling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::flow::{self, FlowError, OnlineWorker, OpenTask, WorkerOptions};
use crate::mobility::{visit_probability, LocationDistribution, MobilityError, MobilityProfile};
use crate::model::{Instance, Point, Region, TowerId, WorkerId};

pub const DEFAULT_ROUNDS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimationConfig {
    pub rounds: u32,
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            rounds: DEFAULT_ROUNDS,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("estimation needs at least one round")]
    NoRounds,
    #[error("task references unknown tower {0}")]
    UnknownTower(TowerId),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Probability that at least one of several independent visitors shows up.
pub fn completion_from_alphas(alphas: impl IntoIterator<Item = f64>) -> f64 {
    1.0 - alphas.into_iter().map(|a| 1.0 - a).product::<f64>()
}

/// Chance that some worker in `selected` connects to `tower` during the period.
pub fn set_completion_prob(profile: &MobilityProfile, tower: TowerId, selected: &[WorkerId]) -> f64 {
    completion_from_alphas(selected.iter().map(|&w| visit_probability(profile, w, tower)))
}

#[derive(Debug, Clone)]
struct SimWorker {
    id: WorkerId,
    region: Region,
    max_tasks: u32,
    acceptance_rate: f64,
    locations: LocationDistribution,
}

/// Shared inputs for estimating many opportunistic sets on one instance.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    profile: &'a MobilityProfile,
    towers: Vec<TowerId>,
    tower_points: Vec<Point>,
    tower_index: HashMap<TowerId, usize>,
    /// Tower slot of each task, in instance order.
    task_tower: Vec<usize>,
    open_all: Vec<OpenTask>,
    workers: Vec<SimWorker>,
    per_km: f64,
    neighbor_cap: usize,
    cfg: EstimationConfig,
}

struct Scenario {
    tower_draw: Vec<f64>,
    /// Accepting workers at their sampled positions.
    online: Vec<OnlineWorker>,
    /// Each online worker's in-region tasks, nearest first.
    reachable: Vec<Vec<usize>>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        instance: &Instance,
        profile: &'a MobilityProfile,
        neighbor_cap: usize,
        cfg: EstimationConfig,
    ) -> Result<Self, EstimateError> {
        if cfg.rounds == 0 {
            return Err(EstimateError::NoRounds);
        }
        let towers: Vec<TowerId> = instance.towers.iter().map(|t| t.id).collect();
        let tower_points: Vec<Point> = instance.towers.iter().map(|t| t.point()).collect();
        let tower_index: HashMap<TowerId, usize> =
            towers.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let mut task_tower = Vec::with_capacity(instance.tasks.len());
        let mut open_all = Vec::with_capacity(instance.tasks.len());
        for t in &instance.tasks {
            let slot = *tower_index
                .get(&t.tower)
                .ok_or(EstimateError::UnknownTower(t.tower))?;
            task_tower.push(slot);
            open_all.push(OpenTask {
                id: t.id,
                point: tower_points[slot],
            });
        }
        let mut workers = Vec::with_capacity(instance.participatory.len());
        for p in &instance.participatory {
            if neighbor_cap < p.max_tasks as usize {
                return Err(FlowError::NeighborCap {
                    worker: p.id,
                    cap: neighbor_cap,
                    max_tasks: p.max_tasks,
                }
                .into());
            }
            workers.push(SimWorker {
                id: p.id,
                region: p.region,
                max_tasks: p.max_tasks,
                acceptance_rate: p.acceptance_rate,
                locations: LocationDistribution::new(profile, p.id, &towers)?,
            });
        }
        Ok(Simulator {
            profile,
            towers,
            tower_points,
            tower_index,
            task_tower,
            open_all,
            workers,
            per_km: instance.budget.per_km,
            neighbor_cap,
            cfg,
        })
    }

    pub fn config(&self) -> EstimationConfig {
        self.cfg
    }

    /// Completion probability of every tower under `selected`.
    fn tower_phi(&self, selected: &[WorkerId]) -> Vec<f64> {
        let mut miss = vec![1.0; self.towers.len()];
        for &w in selected {
            for (t, _) in self.profile.worker_rates(w) {
                if let Some(&slot) = self.tower_index.get(&t) {
                    miss[slot] *= 1.0 - visit_probability(self.profile, w, t);
                }
            }
        }
        miss.into_iter().map(|m| 1.0 - m).collect()
    }

    fn scenario(&self, round: u32) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(u64::from(round));
        let tower_draw = (0..self.towers.len()).map(|_| rng.random::<f64>()).collect();
        let mut online = Vec::new();
        for w in &self.workers {
            let at = w.locations.sample(&mut rng);
            let accepts = rng.random::<f64>() < w.acceptance_rate;
            if accepts {
                online.push(OnlineWorker {
                    id: w.id,
                    position: self.tower_points[self.tower_index[&at]],
                    region: w.region,
                    max_tasks: w.max_tasks,
                    acceptance_rate: w.acceptance_rate,
                });
            }
        }
        let reachable = online
            .iter()
            .map(|w| flow::in_region_by_distance(&w.region, w.position, &self.open_all))
            .collect();
        Scenario {
            tower_draw,
            online,
            reachable,
        }
    }

    /// Completed-task count for one set in one scenario. `cache` holds the
    /// options last built for each online worker and is reused while a
    /// worker's candidate list is unchanged.
    fn completed_in(
        &self,
        scenario: &Scenario,
        phi: &[f64],
        travel_budget: f64,
        cache: &mut Vec<WorkerOptions>,
    ) -> usize {
        let is_open: Vec<bool> = self
            .task_tower
            .iter()
            .map(|&slot| scenario.tower_draw[slot] >= phi[slot])
            .collect();
        let pre = is_open.iter().filter(|o| !**o).count();
        if pre == self.open_all.len() || scenario.online.is_empty() || travel_budget.is_nan() || travel_budget <= 0.0 {
            return pre;
        }
        let cap = self.neighbor_cap.min(flow::MAX_CANDIDATES);
        for (i, (w, reach)) in scenario.online.iter().zip(&scenario.reachable).enumerate() {
            let candidates: Vec<usize> = reach.iter().copied().filter(|&t| is_open[t]).take(cap).collect();
            if cache.get(i).is_some_and(|o| o.candidates == candidates) {
                continue;
            }
            let built = WorkerOptions::from_candidates(
                w.id,
                w.max_tasks as usize,
                w.position,
                candidates,
                &self.open_all,
            )
            .expect("neighbour cap keeps the subset table small");
            if i < cache.len() {
                cache[i] = built;
            } else {
                cache.push(built);
            }
        }
        pre + flow::solve(cache, &self.open_all, self.per_km, travel_budget, false).flow_value()
    }

    /// Mean completed tasks for each `(selected, travel_budget)` pair, all
    /// scored against the same scenarios.
    pub fn estimate_many(&self, sets: &[(Vec<WorkerId>, f64)]) -> Vec<f64> {
        let phis: Vec<Vec<f64>> = sets.iter().map(|(s, _)| self.tower_phi(s)).collect();
        let per_round: Vec<Vec<usize>> = (0..self.cfg.rounds)
            .into_par_iter()
            .map(|r| {
                let scenario = self.scenario(r);
                let mut cache = Vec::with_capacity(scenario.online.len());
                phis.iter()
                    .zip(sets)
                    .map(|(phi, (_, budget))| self.completed_in(&scenario, phi, *budget, &mut cache))
                    .collect()
            })
            .collect();
        let rounds = f64::from(self.cfg.rounds);
        (0..sets.len())
            .map(|i| per_round.iter().map(|r| r[i]).sum::<usize>() as f64 / rounds)
            .collect()
    }

    pub fn estimate(&self, selected: &[WorkerId], travel_budget: f64) -> f64 {
        self.estimate_many(&[(selected.to_vec(), travel_budget)])[0]
    }
}

/// One-shot estimate for a single opportunistic set.
pub fn estimate_snapshot(
    instance: &Instance,
    profile: &MobilityProfile,
    selected: &[WorkerId],
    travel_budget: f64,
    neighbor_cap: usize,
    cfg: EstimationConfig,
) -> Result<f64, EstimateError> {
    Ok(Simulator::new(instance, profile, neighbor_cap, cfg)?.estimate(selected, travel_budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BudgetParams, ParticipatoryCandidate, Region, Task, TaskId, Tower};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn completion_examples() {
        assert_eq!(completion_from_alphas([]), 0.0);
        assert_eq!(completion_from_alphas([0.5, 0.5]), 0.75);
        assert_abs_diff_eq!(completion_from_alphas([0.2, 0.3, 0.5]), 0.72, epsilon = 1e-12);
        let p = MobilityProfile::from_rates([((WorkerId(1), TowerId(0)), std::f64::consts::LN_2)], 1);
        assert_abs_diff_eq!(set_completion_prob(&p, TowerId(0), &[WorkerId(1)]), 0.5, epsilon = 1e-15);
        assert_eq!(set_completion_prob(&p, TowerId(0), &[]), 0.0);
        assert_eq!(set_completion_prob(&p, TowerId(9), &[WorkerId(1)]), 0.0);
    }

    proptest! {
        #[test]
        fn completion_is_monotone(alphas in prop::collection::vec(0.0f64..1.0, 0..8), extra in 0.0f64..1.0) {
            let base = completion_from_alphas(alphas.iter().copied());
            let more = completion_from_alphas(alphas.iter().copied().chain([extra]));
            prop_assert!(more >= base);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }

    fn instance(tasks: u32, pw: Vec<ParticipatoryCandidate>) -> Instance {
        Instance {
            towers: (0..tasks)
                .map(|i| Tower {
                    id: TowerId(i),
                    x: f64::from(i),
                    y: 0.0,
                })
                .collect(),
            tasks: (0..tasks)
                .map(|i| Task {
                    id: TaskId(i),
                    tower: TowerId(i),
                    sensing_start: 0,
                    sensing_end: 100,
                })
                .collect(),
            opportunistic: Vec::new(),
            participatory: pw,
            budget: BudgetParams {
                total: 100.0,
                opp_reward: 10.0,
                per_km: 10.0,
            },
            training_days: 1,
        }
    }

    fn pw(id: u32) -> ParticipatoryCandidate {
        ParticipatoryCandidate {
            id: WorkerId(id),
            history: Vec::new(),
            region: Region {
                min_x: -10.0,
                min_y: -10.0,
                max_x: 10.0,
                max_y: 10.0,
            },
            max_tasks: 2,
            acceptance_rate: 1.0,
            online_position: None,
        }
    }

    #[test]
    fn trivial_estimates() {
        let cfg = EstimationConfig { rounds: 50, seed: 4 };
        let inst = instance(3, Vec::new());
        let none = MobilityProfile::default();
        assert_eq!(estimate_snapshot(&inst, &none, &[], 0.0, 8, cfg).unwrap(), 0.0);

        let sure = MobilityProfile::from_rates((0..3).map(|t| ((WorkerId(7), TowerId(t)), 1e9)), 1);
        let all = estimate_snapshot(&inst, &sure, &[WorkerId(7)], 0.0, 8, cfg).unwrap();
        assert_eq!(all, 3.0);

        // a lone participatory worker always standing on the lone task
        let inst = instance(1, vec![pw(1)]);
        let home = MobilityProfile::from_rates([((WorkerId(1), TowerId(0)), 1.0)], 1);
        let est = estimate_snapshot(&inst, &home, &[], 1000.0, 8, cfg).unwrap();
        assert_eq!(est, 1.0);
    }

    #[test]
    fn rejects_bad_configuration() {
        let inst = instance(1, vec![pw(1)]);
        let p = MobilityProfile::default();
        let zero = EstimationConfig { rounds: 0, seed: 0 };
        assert_eq!(Simulator::new(&inst, &p, 8, zero).unwrap_err(), EstimateError::NoRounds);
        assert!(matches!(
            Simulator::new(&inst, &p, 1, EstimationConfig::default()).unwrap_err(),
            EstimateError::Flow(FlowError::NeighborCap { .. })
        ));
    }

    #[test]
    fn converges_to_expected_coverage_without_participants() {
        let inst = instance(10, Vec::new());
        let rates: Vec<_> = (0..10)
            .map(|t| ((WorkerId(1), TowerId(t)), 0.1 * f64::from(t + 1)))
            .collect();
        let p = MobilityProfile::from_rates(rates, 1);
        let expected: f64 = (0..10)
            .map(|t| set_completion_prob(&p, TowerId(t), &[WorkerId(1)]))
            .sum();
        let variance: f64 = (0..10)
            .map(|t| {
                let q = set_completion_prob(&p, TowerId(t), &[WorkerId(1)]);
                q * (1.0 - q)
            })
            .sum();
        let rounds = 4000;
        let cfg = EstimationConfig { rounds, seed: 9 };
        let est = estimate_snapshot(&inst, &p, &[WorkerId(1)], 0.0, 8, cfg).unwrap();
        let sigma = (variance / f64::from(rounds)).sqrt();
        assert!((est - expected).abs() <= 3.0 * sigma, "{est} vs {expected} ± {sigma}");
    }

    #[test]
    fn seeds_agree_within_half_a_task() {
        let pws: Vec<ParticipatoryCandidate> = (0..4)
            .map(|i| {
                let mut w = pw(100 + i);
                w.acceptance_rate = 0.6;
                w
            })
            .collect();
        let inst = instance(10, pws);
        let mut rates = Vec::new();
        for t in 0..10 {
            rates.push(((WorkerId(1), TowerId(t)), 0.05 * f64::from(t)));
        }
        for i in 0..4u32 {
            rates.push(((WorkerId(100 + i), TowerId(i * 3)), 1.0));
            rates.push(((WorkerId(100 + i), TowerId(i * 2 + 1)), 0.5));
        }
        let p = MobilityProfile::from_rates(rates, 1);
        let est = |seed| {
            estimate_snapshot(&inst, &p, &[WorkerId(1)], 40.0, 8, EstimationConfig { rounds: 200, seed })
                .unwrap()
        };
        let (a, b) = (est(1), est(2));
        assert!((a - b).abs() < 0.5, "{a} vs {b}");
        assert!((0.0..=10.0).contains(&a));
        assert_eq!(a, est(1));
    }

    #[test]
    fn common_scenarios_make_larger_sets_no_worse_without_participants() {
        let inst = instance(6, Vec::new());
        let rates: Vec<_> = (0..6)
            .flat_map(|t| [((WorkerId(1), TowerId(t)), 0.3), ((WorkerId(2), TowerId(t)), 0.2)])
            .collect();
        let p = MobilityProfile::from_rates(rates, 1);
        let sim = Simulator::new(&inst, &p, 8, EstimationConfig { rounds: 40, seed: 3 }).unwrap();
        let est = sim.estimate_many(&[
            (vec![], 0.0),
            (vec![WorkerId(1)], 0.0),
            (vec![WorkerId(1), WorkerId(2)], 0.0),
        ]);
        assert!(est[0] <= est[1] && est[1] <= est[2], "{est:?}");
    }
}
