//! Domain types shared by every stage of the allocator.
//!
//! Coordinates are planar kilometres, timestamps are integer seconds since the
//! instance epoch and days are integer indices (`timestamp / 86_400`).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub const SECONDS_PER_DAY: i64 = 86_400;

macro_rules! id_type {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u32> for $name {
            fn from(v: u32) -> Self {
                $name(v)
            }
        }
    };
}

id_type!(TowerId);
id_type!(TaskId);
id_type!(WorkerId);

/// A point in the planar km frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub id: TowerId,
    /// East coordinate, km.
    pub x: f64,
    /// North coordinate, km.
    pub y: f64,
}

impl Tower {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub tower: TowerId,
    pub sensing_start: i64,
    pub sensing_end: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionRecord {
    pub worker: WorkerId,
    pub tower: TowerId,
    pub timestamp: i64,
    pub day: u32,
}

impl ConnectionRecord {
    pub fn new(worker: WorkerId, tower: TowerId, timestamp: i64) -> Self {
        ConnectionRecord {
            worker,
            tower,
            timestamp,
            day: timestamp.div_euclid(SECONDS_PER_DAY) as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpportunisticCandidate {
    pub id: WorkerId,
    pub history: Vec<ConnectionRecord>,
}

/// Axis-aligned rectangle in km within which a participatory worker travels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Region {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn is_degenerate(&self) -> bool {
        let finite = [self.min_x, self.min_y, self.max_x, self.max_y]
            .iter()
            .all(|v| v.is_finite());
        !finite || self.min_x >= self.max_x || self.min_y >= self.max_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipatoryCandidate {
    pub id: WorkerId,
    pub history: Vec<ConnectionRecord>,
    pub region: Region,
    pub max_tasks: u32,
    pub acceptance_rate: f64,
    /// Tower the worker reports at online time; unknown during the offline phase.
    pub online_position: Option<TowerId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetParams {
    pub total: f64,
    /// Fixed reward per selected opportunistic worker.
    pub opp_reward: f64,
    /// Participatory reward per km travelled.
    pub per_km: f64,
}

impl BudgetParams {
    /// How many opportunistic workers the whole budget could pay for.
    pub fn max_opportunistic(&self) -> usize {
        if self.opp_reward <= 0.0 || self.total <= 0.0 {
            return 0;
        }
        (self.total / self.opp_reward).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub towers: Vec<Tower>,
    pub tasks: Vec<Task>,
    pub opportunistic: Vec<OpportunisticCandidate>,
    pub participatory: Vec<ParticipatoryCandidate>,
    pub budget: BudgetParams,
    /// Days `0..training_days` build profiles; day `training_days` is the sensing day.
    pub training_days: u32,
}

impl Instance {
    pub fn tower(&self, id: TowerId) -> Option<&Tower> {
        self.towers.iter().find(|t| t.id == id)
    }

    pub fn tower_points(&self) -> BTreeMap<TowerId, Point> {
        self.towers.iter().map(|t| (t.id, t.point())).collect()
    }

    /// Latest sensing deadline over all tasks.
    pub fn sensing_end(&self) -> Option<i64> {
        self.tasks.iter().map(|t| t.sensing_end).max()
    }

    pub fn held_out_day(&self) -> u32 {
        self.training_days
    }
}

/// One participatory worker's online assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlinePair {
    pub worker: WorkerId,
    /// Visiting order.
    pub tasks: Vec<TaskId>,
    pub tour_km: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub selected_opportunistic: BTreeSet<WorkerId>,
    pub online_pairs: Vec<OnlinePair>,
    pub completed_tasks: BTreeSet<TaskId>,
    pub opp_spend: f64,
    pub par_spend: f64,
    /// Offline estimate of completed tasks, when the strategy produces one.
    pub estimated_completed: Option<f64>,
    /// Phase name → seconds.
    pub wall_clock: BTreeMap<String, f64>,
}

impl AllocationResult {
    pub fn total_spend(&self) -> f64 {
        self.opp_spend + self.par_spend
    }

    /// Total spend within the budget.
    pub fn within_budget(&self, budget: &BudgetParams) -> bool {
        self.opp_spend + self.par_spend <= budget.total
    }
}

/// One broken invariant found by [`validate_instance`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateTower(TowerId),
    NonFiniteTower(TowerId),
    DuplicateTask(TaskId),
    UnknownTaskTower { task: TaskId, tower: TowerId },
    EmptySensingWindow(TaskId),
    DuplicateWorker(WorkerId),
    RecordDayMismatch { worker: WorkerId, timestamp: i64, day: u32 },
    RecordWorkerMismatch { owner: WorkerId, found: WorkerId },
    UnknownRecordTower { worker: WorkerId, tower: TowerId },
    AcceptanceRate { worker: WorkerId, rate: f64 },
    MaxTasks(WorkerId),
    DegenerateRegion(WorkerId),
    UnknownOnlinePosition { worker: WorkerId, tower: TowerId },
    NonPositiveBudget(&'static str, f64),
    RewardExceedsBudget { reward: f64, total: f64 },
}

impl Violation {
    /// True for violations that only concern the budget record.
    pub fn is_budget(&self) -> bool {
        matches!(
            self,
            Violation::NonPositiveBudget(..) | Violation::RewardExceedsBudget { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateTower(id) => write!(f, "tower {id}: duplicate id"),
            Violation::NonFiniteTower(id) => write!(f, "tower {id}: non-finite coordinate"),
            Violation::DuplicateTask(id) => write!(f, "task {id}: duplicate id"),
            Violation::UnknownTaskTower { task, tower } => {
                write!(f, "task {task}: unknown tower {tower}")
            }
            Violation::EmptySensingWindow(id) => {
                write!(f, "task {id}: sensing start is not before sensing end")
            }
            Violation::DuplicateWorker(id) => write!(f, "worker {id}: duplicate id"),
            Violation::RecordDayMismatch {
                worker,
                timestamp,
                day,
            } => write!(
                f,
                "worker {worker}: record at {timestamp}s is outside declared day {day}"
            ),
            Violation::RecordWorkerMismatch { owner, found } => {
                write!(f, "worker {owner}: history holds a record of worker {found}")
            }
            Violation::UnknownRecordTower { worker, tower } => {
                write!(f, "worker {worker}: record at unknown tower {tower}")
            }
            Violation::AcceptanceRate { worker, rate } => {
                write!(f, "worker {worker}: acceptance rate {rate} outside [0, 1]")
            }
            Violation::MaxTasks(id) => write!(f, "worker {id}: max tasks must be at least 1"),
            Violation::DegenerateRegion(id) => write!(f, "worker {id}: degenerate region"),
            Violation::UnknownOnlinePosition { worker, tower } => {
                write!(f, "worker {worker}: online position at unknown tower {tower}")
            }
            Violation::NonPositiveBudget(field, v) => {
                write!(f, "budget: {field} must be positive, got {v}")
            }
            Violation::RewardExceedsBudget { reward, total } => {
                write!(f, "budget: opportunistic reward {reward} exceeds total {total}")
            }
        }
    }
}

fn check_history(
    owner: WorkerId,
    history: &[ConnectionRecord],
    towers: &HashSet<TowerId>,
    out: &mut Vec<Violation>,
) {
    for r in history {
        if r.worker != owner {
            out.push(Violation::RecordWorkerMismatch {
                owner,
                found: r.worker,
            });
        }
        if r.timestamp.div_euclid(SECONDS_PER_DAY) != i64::from(r.day) {
            out.push(Violation::RecordDayMismatch {
                worker: owner,
                timestamp: r.timestamp,
                day: r.day,
            });
        }
        if !towers.contains(&r.tower) {
            out.push(Violation::UnknownRecordTower {
                worker: owner,
                tower: r.tower,
            });
        }
    }
}

/// Lists every invariant the instance breaks; empty when it is well formed.
pub fn validate_instance(instance: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut tower_ids = HashSet::new();
    for t in &instance.towers {
        if !tower_ids.insert(t.id) {
            out.push(Violation::DuplicateTower(t.id));
        }
        if !t.x.is_finite() || !t.y.is_finite() {
            out.push(Violation::NonFiniteTower(t.id));
        }
    }

    let mut task_ids = HashSet::new();
    for t in &instance.tasks {
        if !task_ids.insert(t.id) {
            out.push(Violation::DuplicateTask(t.id));
        }
        if !tower_ids.contains(&t.tower) {
            out.push(Violation::UnknownTaskTower {
                task: t.id,
                tower: t.tower,
            });
        }
        if t.sensing_start >= t.sensing_end {
            out.push(Violation::EmptySensingWindow(t.id));
        }
    }

    let mut worker_ids = HashSet::new();
    for w in &instance.opportunistic {
        if !worker_ids.insert(w.id) {
            out.push(Violation::DuplicateWorker(w.id));
        }
        check_history(w.id, &w.history, &tower_ids, &mut out);
    }
    for w in &instance.participatory {
        if !worker_ids.insert(w.id) {
            out.push(Violation::DuplicateWorker(w.id));
        }
        check_history(w.id, &w.history, &tower_ids, &mut out);
        if !(0.0..=1.0).contains(&w.acceptance_rate) {
            out.push(Violation::AcceptanceRate {
                worker: w.id,
                rate: w.acceptance_rate,
            });
        }
        if w.max_tasks < 1 {
            out.push(Violation::MaxTasks(w.id));
        }
        if w.region.is_degenerate() {
            out.push(Violation::DegenerateRegion(w.id));
        }
        if let Some(p) = w.online_position {
            if !tower_ids.contains(&p) {
                out.push(Violation::UnknownOnlinePosition {
                    worker: w.id,
                    tower: p,
                });
            }
        }
    }

    let b = &instance.budget;
    for (name, v) in [
        ("total", b.total),
        ("opportunistic reward", b.opp_reward),
        ("per-km reward", b.per_km),
    ] {
        // NaN fails this comparison as well.
        if !(v > 0.0 && v.is_finite()) {
            out.push(Violation::NonPositiveBudget(name, v));
        }
    }
    if b.opp_reward > b.total {
        out.push(Violation::RewardExceedsBudget {
            reward: b.opp_reward,
            total: b.total,
        });
    }

    out
}
