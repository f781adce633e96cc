//! Online assignment of participatory workers.
//!
//! Each worker may take one task set (at most `max_tasks` open tasks inside
//! its region) and is paid `per_km` times the shortest open tour from its
//! position through that set. Assignment is a min-cost flow over the
//! worker → task set → task network, stopped before the implied payment
//! would exceed the travel budget.

mod network;
mod solver;
pub mod tour;

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::model::{Point, Region, TaskId, WorkerId};

pub use network::{build_network, Arc, FlowNetwork, TaskNode, TaskSetNode, WorkerNode};
pub use solver::assign_min_cost;
pub(crate) use solver::{solve, WorkerOptions, MAX_CANDIDATES};
pub use tour::{manhattan_km, shortest_tour, SubsetTours};

pub const DEFAULT_NEIGHBOR_CAP: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("tour needs between 1 and {max} stops, got {0}", max = tour::MAX_TOUR_POINTS)]
    TourSize(usize),
    #[error("task-set enumeration would produce {0} subsets")]
    TooManySubsets(usize),
    #[error("neighbour cap {cap} is below worker {worker}'s max tasks {max_tasks}")]
    NeighborCap {
        worker: WorkerId,
        cap: usize,
        max_tasks: u32,
    },
}

/// An open task and where it is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenTask {
    pub id: TaskId,
    pub point: Point,
}

/// A participatory worker as seen at assignment time.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineWorker {
    pub id: WorkerId,
    pub position: Point,
    pub region: Region,
    pub max_tasks: u32,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub worker: WorkerId,
    /// Visiting order.
    pub tasks: Vec<TaskId>,
    pub tour_km: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OnlineAssignment {
    pub pairs: Vec<(WorkerId, TaskSet)>,
    pub covered_tasks: BTreeSet<TaskId>,
    pub travel_spend: f64,
}

impl OnlineAssignment {
    pub fn flow_value(&self) -> usize {
        self.covered_tasks.len()
    }
}

/// In-region tasks as indices into `open`, ordered by (distance, task id).
pub(crate) fn in_region_by_distance(region: &Region, position: Point, open: &[OpenTask]) -> Vec<usize> {
    let mut near: Vec<(f64, TaskId, usize)> = open
        .iter()
        .enumerate()
        .filter(|(_, t)| region.contains(t.point))
        .map(|(i, t)| (manhattan_km(position, t.point), t.id, i))
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near.into_iter().map(|(_, _, i)| i).collect()
}

/// The `cap` nearest open in-region tasks.
pub(crate) fn nearest_in_region(
    region: &Region,
    position: Point,
    open: &[OpenTask],
    cap: usize,
) -> Vec<usize> {
    let mut near = in_region_by_distance(region, position, open);
    near.truncate(cap);
    near
}

/// Every non-empty subset of size up to `max_tasks` drawn from the
/// `neighbor_cap` nearest open in-region tasks, each with its shortest tour.
pub fn enumerate_task_sets(
    worker: &OnlineWorker,
    open: &[OpenTask],
    neighbor_cap: usize,
) -> Result<Vec<TaskSet>, FlowError> {
    let options = WorkerOptions::build(worker, open, neighbor_cap)?;
    Ok(options.task_sets(open))
}

/// Filters workers by their acceptance rate (when sampling), then assigns.
pub fn assign_online<R: Rng + ?Sized>(
    workers: &[OnlineWorker],
    open: &[OpenTask],
    travel_budget: f64,
    per_km: f64,
    neighbor_cap: usize,
    rng: &mut R,
    acceptance_sampling: bool,
) -> Result<OnlineAssignment, FlowError> {
    let mut options = Vec::with_capacity(workers.len());
    for w in workers {
        // one draw per worker regardless of outcome keeps streams aligned
        let accepts = if acceptance_sampling {
            rng.random::<f64>() < w.acceptance_rate
        } else {
            true
        };
        if accepts {
            options.push(WorkerOptions::build(w, open, neighbor_cap)?);
        }
    }
    Ok(solve(&options, open, per_km, travel_budget, true))
}

#[cfg(test)]
pub(crate) mod oracle;
