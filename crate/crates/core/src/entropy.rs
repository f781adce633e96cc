//! Location entropy of task towers and the task priorities derived from it.
//!
//! A tower visited by few participatory workers, or visited mostly by one of
//! them, has low entropy and therefore high priority for opportunistic coverage.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::model::{ParticipatoryCandidate, Task, TaskId, TowerId, WorkerId};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("cannot weight an empty task set")]
    NoTasks,
    #[error("smoothing epsilon must be positive, got {0}")]
    BadEpsilon(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskWeights {
    pub entropy: BTreeMap<TaskId, f64>,
    pub weight: BTreeMap<TaskId, f64>,
}

impl TaskWeights {
    pub fn get(&self, task: TaskId) -> f64 {
        self.weight.get(&task).copied().unwrap_or(0.0)
    }

    /// Uniform weights over the given tasks.
    pub fn equal(tasks: &[Task]) -> Result<Self, EntropyError> {
        if tasks.is_empty() {
            return Err(EntropyError::NoTasks);
        }
        let w = 1.0 / tasks.len() as f64;
        Ok(TaskWeights {
            entropy: tasks.iter().map(|t| (t.id, 0.0)).collect(),
            weight: tasks.iter().map(|t| (t.id, w)).collect(),
        })
    }

    /// Weights inversely proportional to `total visits + 1`.
    pub fn visit_frequency(
        tasks: &[Task],
        counts: &TowerVisitCounts,
    ) -> Result<Self, EntropyError> {
        if tasks.is_empty() {
            return Err(EntropyError::NoTasks);
        }
        let raw: Vec<(TaskId, f64)> = tasks
            .iter()
            .map(|t| (t.id, 1.0 / (counts.total(t.tower) as f64 + 1.0)))
            .collect();
        let sum: f64 = raw.iter().map(|(_, v)| v).sum();
        Ok(TaskWeights {
            entropy: tasks.iter().map(|t| (t.id, 0.0)).collect(),
            weight: raw.into_iter().map(|(id, v)| (id, v / sum)).collect(),
        })
    }
}

/// Shannon entropy (natural log) of the share of visits each worker made.
///
/// Zero when at most one worker visited.
pub fn location_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let visitors = counts.iter().filter(|&&c| c > 0).count();
    if visitors <= 1 {
        return 0.0;
    }
    let total = total as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Smoothed inverse-entropy normalisation.
pub fn task_weights(
    entropies: &BTreeMap<TaskId, f64>,
    epsilon: f64,
) -> Result<TaskWeights, EntropyError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(EntropyError::BadEpsilon(epsilon));
    }
    if entropies.is_empty() {
        return Err(EntropyError::NoTasks);
    }
    let inv: Vec<(TaskId, f64)> = entropies
        .iter()
        .map(|(&id, &h)| (id, 1.0 / (h + epsilon)))
        .collect();
    let sum: f64 = inv.iter().map(|(_, v)| v).sum();
    Ok(TaskWeights {
        entropy: entropies.clone(),
        weight: inv.into_iter().map(|(id, v)| (id, v / sum)).collect(),
    })
}

/// How often each participatory worker connected to each tower.
#[derive(Debug, Clone, Default)]
pub struct TowerVisitCounts {
    per_tower: HashMap<TowerId, BTreeMap<WorkerId, u64>>,
}

impl TowerVisitCounts {
    /// Counts training-window connections (`day < training_days`).
    pub fn from_participatory(workers: &[ParticipatoryCandidate], training_days: u32) -> Self {
        let mut per_tower: HashMap<TowerId, BTreeMap<WorkerId, u64>> = HashMap::new();
        for w in workers {
            for r in w.history.iter().filter(|r| r.day < training_days) {
                *per_tower.entry(r.tower).or_default().entry(w.id).or_default() += 1;
            }
        }
        TowerVisitCounts { per_tower }
    }

    pub fn counts(&self, tower: TowerId) -> Vec<u64> {
        self.per_tower
            .get(&tower)
            .map(|m| m.values().copied().collect())
            .unwrap_or_default()
    }

    pub fn total(&self, tower: TowerId) -> u64 {
        self.per_tower
            .get(&tower)
            .map(|m| m.values().sum())
            .unwrap_or(0)
    }
}

pub fn task_entropies(tasks: &[Task], counts: &TowerVisitCounts) -> BTreeMap<TaskId, f64> {
    tasks
        .iter()
        .map(|t| (t.id, location_entropy(&counts.counts(t.tower))))
        .collect()
}

/// Entropy-based weights for the tasks given participatory training histories.
pub fn entropy_weights(
    tasks: &[Task],
    participatory: &[ParticipatoryCandidate],
    training_days: u32,
    epsilon: f64,
) -> Result<TaskWeights, EntropyError> {
    let counts = TowerVisitCounts::from_participatory(participatory, training_days);
    task_weights(&task_entropies(tasks, &counts), epsilon)
}
