//! Poisson connection-rate profiles built from historical tower connections.
//!
//! A worker's daily connection count at a tower is modelled as Poisson with
//! mean `λ`, so the chance of at least one connection during the sensing day
//! is `1 - exp(-λ)`.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use thiserror::Error;

use crate::model::{ConnectionRecord, TowerId, WorkerId};

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("training window must span at least one day")]
    ZeroTrainingDays,
    #[error("record of worker {worker} on day {day} lies outside the {training_days}-day training window")]
    RecordOutsideWindow {
        worker: WorkerId,
        day: u32,
        training_days: u32,
    },
    #[error("no towers to choose a location from")]
    NoTowers,
}

/// Per-worker, per-tower mean connections per sensing period.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MobilityProfile {
    rates: BTreeMap<WorkerId, BTreeMap<TowerId, f64>>,
    training_days: u32,
}

impl MobilityProfile {
    /// Builds a profile from explicit rates. Non-positive or non-finite rates are dropped.
    pub fn from_rates(
        rates: impl IntoIterator<Item = ((WorkerId, TowerId), f64)>,
        training_days: u32,
    ) -> Self {
        let mut map: BTreeMap<WorkerId, BTreeMap<TowerId, f64>> = BTreeMap::new();
        for ((w, t), lambda) in rates {
            if lambda.is_finite() && lambda > 0.0 {
                map.entry(w).or_default().insert(t, lambda);
            }
        }
        MobilityProfile {
            rates: map,
            training_days,
        }
    }

    pub fn training_days(&self) -> u32 {
        self.training_days
    }

    /// λ for the pair; zero when the worker never connected there.
    pub fn rate(&self, worker: WorkerId, tower: TowerId) -> f64 {
        self.rates
            .get(&worker)
            .and_then(|m| m.get(&tower))
            .copied()
            .unwrap_or(0.0)
    }

    /// Towers with positive rate for the worker, in ascending tower id order.
    pub fn worker_rates(&self, worker: WorkerId) -> impl Iterator<Item = (TowerId, f64)> + '_ {
        self.rates
            .get(&worker)
            .into_iter()
            .flat_map(|m| m.iter().map(|(t, l)| (*t, *l)))
    }

    pub fn has_history(&self, worker: WorkerId) -> bool {
        self.rates.get(&worker).is_some_and(|m| !m.is_empty())
    }

    pub fn workers(&self) -> impl Iterator<Item = WorkerId> + '_ {
        self.rates.keys().copied()
    }
}

/// Averages connection counts over the training window.
pub fn build_profile<'a>(
    records: impl IntoIterator<Item = &'a ConnectionRecord>,
    training_days: u32,
) -> Result<MobilityProfile, MobilityError> {
    if training_days == 0 {
        return Err(MobilityError::ZeroTrainingDays);
    }
    let mut counts: BTreeMap<(WorkerId, TowerId), u64> = BTreeMap::new();
    for r in records {
        if r.day >= training_days {
            return Err(MobilityError::RecordOutsideWindow {
                worker: r.worker,
                day: r.day,
                training_days,
            });
        }
        *counts.entry((r.worker, r.tower)).or_default() += 1;
    }
    let days = f64::from(training_days);
    Ok(MobilityProfile::from_rates(
        counts.into_iter().map(|(k, c)| (k, c as f64 / days)),
        training_days,
    ))
}

/// Probability of at least one connection in a period with mean `lambda`.
pub fn visit_probability_from_rate(lambda: f64) -> f64 {
    -(-lambda).exp_m1()
}

pub fn visit_probability(profile: &MobilityProfile, worker: WorkerId, tower: TowerId) -> f64 {
    visit_probability_from_rate(profile.rate(worker, tower))
}

/// Where a participatory worker may be found at online time.
///
/// Towers are weighted by visit probability; workers without history are
/// spread uniformly over every tower.
#[derive(Debug, Clone)]
pub struct LocationDistribution {
    towers: Vec<TowerId>,
    weights: Option<WeightedIndex<f64>>,
}

impl LocationDistribution {
    pub fn new(
        profile: &MobilityProfile,
        worker: WorkerId,
        all_towers: &[TowerId],
    ) -> Result<Self, MobilityError> {
        let (towers, alphas): (Vec<TowerId>, Vec<f64>) = profile
            .worker_rates(worker)
            .map(|(t, l)| (t, visit_probability_from_rate(l)))
            .filter(|(_, a)| *a > 0.0)
            .unzip();
        if towers.is_empty() {
            if all_towers.is_empty() {
                return Err(MobilityError::NoTowers);
            }
            return Ok(LocationDistribution {
                towers: all_towers.to_vec(),
                weights: None,
            });
        }
        let weights = WeightedIndex::new(&alphas).expect("positive finite weights");
        Ok(LocationDistribution {
            towers,
            weights: Some(weights),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TowerId {
        match &self.weights {
            Some(w) => self.towers[w.sample(rng)],
            None => self.towers[rng.random_range(0..self.towers.len())],
        }
    }
}

/// Draws a simulated online position for a participatory worker.
pub fn sample_participatory_location<R: Rng + ?Sized>(
    profile: &MobilityProfile,
    worker: WorkerId,
    towers: &[TowerId],
    rng: &mut R,
) -> Result<TowerId, MobilityError> {
    if towers.is_empty() {
        return Err(MobilityError::NoTowers);
    }
    Ok(LocationDistribution::new(profile, worker, towers)?.sample(rng))
}

/// The worker's highest-rate tower (lowest id on ties); uniform draw when
/// the worker has no history.
pub fn most_frequent_tower<R: Rng + ?Sized>(
    profile: &MobilityProfile,
    worker: WorkerId,
    towers: &[TowerId],
    rng: &mut R,
) -> Result<TowerId, MobilityError> {
    let mut best: Option<(TowerId, f64)> = None;
    for (t, l) in profile.worker_rates(worker) {
        // worker_rates is ascending by id, so strict > keeps the lowest id on ties
        if best.is_none_or(|(_, bl)| l > bl) {
            best = Some((t, l));
        }
    }
    match best {
        Some((t, _)) => Ok(t),
        None if towers.is_empty() => Err(MobilityError::NoTowers),
        None => Ok(towers[rng.random_range(0..towers.len())]),
    }
}
