//! Reading tower and connection CSVs, the planar projection, train/test day
//! splits, instance JSON, and a seeded synthetic generator with the same shape
//! as ingested traces.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, NaiveDateTime};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::manhattan_km;
use crate::mobility::{build_profile, most_frequent_tower};
use crate::model::{
    BudgetParams, ConnectionRecord, Instance, OpportunisticCandidate, ParticipatoryCandidate,
    Region, Task, TaskId, Tower, TowerId, WorkerId, SECONDS_PER_DAY,
};

/// km per degree of latitude.
pub const KM_PER_DEG_LAT: f64 = 110.574;
/// km per degree of longitude at the equator.
pub const KM_PER_DEG_LON: f64 = 111.320;

pub const INSTANCE_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: coordinate out of range (lat {lat}, lon {lon})")]
    Coordinate { line: u64, lat: f64, lon: f64 },
    #[error("line {line}: unknown tower {tower}")]
    UnknownTower { line: u64, tower: u32 },
    #[error("line {line}: unparseable timestamp {value:?}")]
    Timestamp { line: u64, value: String },
    #[error("instance schema {0} is not supported")]
    Schema(u32),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row of a `tower_id,lat,lon` file; coordinates are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTowerRow {
    pub tower_id: u32,
    pub lat: String,
    pub lon: String,
}

/// A tower row with parsed, range-checked coordinates in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTower {
    pub id: TowerId,
    pub lat: f64,
    pub lon: f64,
}

/// One row of a `user_id,timestamp,tower_id` file; the timestamp is kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecordRow {
    pub user_id: u32,
    pub timestamp: String,
    pub tower_id: u32,
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    DataError::Malformed {
        line,
        message: e.to_string(),
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<(u64, T)>, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: T = rec.deserialize(None).map_err(|e| DataError::Malformed {
            line,
            message: e.to_string(),
        })?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV write");
    }
    w.into_inner().expect("in-memory CSV flush")
}

pub fn read_tower_rows(bytes: &[u8]) -> Result<Vec<RawTowerRow>, DataError> {
    Ok(read_rows(bytes)?.into_iter().map(|(_, r)| r).collect())
}

/// Parses and range-checks tower coordinates.
pub fn read_geo_towers(bytes: &[u8]) -> Result<Vec<GeoTower>, DataError> {
    read_rows::<RawTowerRow>(bytes)?
        .into_iter()
        .map(|(line, r)| {
            let num = |v: &str| {
                v.parse::<f64>().map_err(|e| DataError::Malformed {
                    line,
                    message: format!("coordinate {v:?}: {e}"),
                })
            };
            let (lat, lon) = (num(&r.lat)?, num(&r.lon)?);
            let ok = lat.is_finite()
                && lon.is_finite()
                && (-90.0..=90.0).contains(&lat)
                && (-180.0..=180.0).contains(&lon);
            if ok {
                Ok(GeoTower {
                    id: TowerId(r.tower_id),
                    lat,
                    lon,
                })
            } else {
                Err(DataError::Coordinate { line, lat, lon })
            }
        })
        .collect()
}

pub fn write_tower_rows(rows: &[RawTowerRow]) -> Vec<u8> {
    write_rows(rows)
}

pub fn read_record_rows(bytes: &[u8]) -> Result<Vec<RawRecordRow>, DataError> {
    Ok(read_rows(bytes)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_record_rows(rows: &[RawRecordRow]) -> Vec<u8> {
    write_rows(rows)
}

/// Equirectangular projection about the centroid of `rows`.
pub fn project(rows: &[GeoTower]) -> Vec<Tower> {
    if rows.is_empty() {
        return Vec::new();
    }
    let n = rows.len() as f64;
    let lat0 = rows.iter().map(|r| r.lat).sum::<f64>() / n;
    let lon0 = rows.iter().map(|r| r.lon).sum::<f64>() / n;
    let kx = KM_PER_DEG_LON * lat0.to_radians().cos();
    rows.iter()
        .map(|r| Tower {
            id: r.id,
            x: (r.lon - lon0) * kx,
            y: (r.lat - lat0) * KM_PER_DEG_LAT,
        })
        .collect()
}

/// Parses a `tower_id,lat,lon` CSV into planar towers.
pub fn parse_towers(bytes: &[u8]) -> Result<Vec<Tower>, DataError> {
    Ok(project(&read_geo_towers(bytes)?))
}

/// Epoch seconds, RFC 3339, or `YYYY-MM-DD HH:MM:SS` (read as UTC).
pub fn parse_timestamp(value: &str) -> Option<i64> {
    if let Ok(secs) = value.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(value) {
        return Some(t.timestamp());
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(value, f).ok())
        .map(|t| t.and_utc().timestamp())
}

/// Parses a `user_id,timestamp,tower_id` CSV. Timestamps are rebased so the
/// earliest record falls on day 0.
pub fn parse_records(bytes: &[u8], towers: &[Tower]) -> Result<Vec<ConnectionRecord>, DataError> {
    let known: BTreeSet<TowerId> = towers.iter().map(|t| t.id).collect();
    let mut raw = Vec::new();
    for (line, r) in read_rows::<RawRecordRow>(bytes)? {
        let ts = parse_timestamp(&r.timestamp).ok_or_else(|| DataError::Timestamp {
            line,
            value: r.timestamp.clone(),
        })?;
        if !known.contains(&TowerId(r.tower_id)) {
            return Err(DataError::UnknownTower {
                line,
                tower: r.tower_id,
            });
        }
        raw.push((WorkerId(r.user_id), TowerId(r.tower_id), ts));
    }
    let Some(first) = raw.iter().map(|r| r.2).min() else {
        return Ok(Vec::new());
    };
    let epoch = first.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY;
    Ok(raw
        .into_iter()
        .map(|(w, t, ts)| ConnectionRecord::new(w, t, ts - epoch))
        .collect())
}

/// Records before `training_days` and the rest.
pub fn split_days(
    records: &[ConnectionRecord],
    training_days: u32,
) -> (Vec<ConnectionRecord>, Vec<ConnectionRecord>) {
    records.iter().partition(|r| r.day < training_days)
}

#[derive(Serialize)]
struct InstanceOut<'a> {
    schema: u32,
    #[serde(flatten)]
    instance: &'a Instance,
}

#[derive(Deserialize)]
struct InstanceIn {
    schema: u32,
    #[serde(flatten)]
    instance: Instance,
}

pub fn instance_to_json(instance: &Instance) -> String {
    serde_json::to_string_pretty(&InstanceOut {
        schema: INSTANCE_SCHEMA,
        instance,
    })
    .expect("instance serialises")
}

pub fn instance_from_json(text: &str) -> Result<Instance, DataError> {
    let file: InstanceIn = serde_json::from_str(text)?;
    if file.schema != INSTANCE_SCHEMA {
        return Err(DataError::Schema(file.schema));
    }
    Ok(file.instance)
}

/// Seconds into the sensing day at which tasks open and close.
pub const SENSING_START_SECS: i64 = 8 * 3600;
pub const SENSING_END_SECS: i64 = 18 * 3600;

/// Padding around a participatory worker's visited towers, km.
pub const REGION_MARGIN_KM: f64 = 0.5;

/// Settings shared by generated and ingested instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub num_tasks: u32,
    /// Fraction of workers labelled opportunistic.
    pub gamma: f64,
    pub mu_accept: f64,
    pub sigma_accept: f64,
    pub training_days: u32,
    pub budget: BudgetParams,
    pub seed: u64,
}

impl PopulationParams {
    fn check(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Params(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie strictly between 0 and 1");
        }
        if !(0.0..=1.0).contains(&self.mu_accept) {
            return bad("mean acceptance must lie in [0, 1]");
        }
        if !(self.sigma_accept >= 0.0 && self.sigma_accept.is_finite()) {
            return bad("acceptance spread must be finite and non-negative");
        }
        if self.num_tasks == 0 || self.training_days == 0 {
            return bad("task count and training days must be at least 1");
        }
        Ok(())
    }
}

/// Synthetic city: towers on a jittered grid, workers with home, work and
/// occasional towers visited at Poisson rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub num_towers: u32,
    pub num_workers: u32,
    pub area_km: f64,
    /// Multiplier on every worker's daily connection rates; at 1.0 a worker
    /// averages about four connections a day.
    pub activity: f64,
    /// Participatory workers avoid the western half of the area.
    pub sparse_west: bool,
    pub population: PopulationParams,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            num_towers: 100,
            num_workers: 300,
            area_km: 20.0,
            activity: 0.5,
            sparse_west: false,
            population: PopulationParams {
                num_tasks: 90,
                gamma: 0.6,
                mu_accept: 1.0,
                sigma_accept: 0.1,
                training_days: 9,
                budget: BudgetParams {
                    total: 800.0,
                    opp_reward: 10.0,
                    per_km: 10.0,
                },
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Opportunistic,
    Participatory,
}

/// Hours of the day during which each kind of tower sees connections. Every
/// window lies inside the sensing period, so daily rates describe it exactly.
const HOME_HOURS: [(i64, i64); 2] = [(8, 9), (17, 18)];
const WORK_HOURS: [(i64, i64); 1] = [(9, 17)];
const ERRAND_HOURS: [(i64, i64); 1] = [(8, 18)];

/// A tower a synthetic worker returns to: id, daily rate, active hours.
type Anchor = (TowerId, f64, &'static [(i64, i64)]);

/// Exponent of the rank-based popularity that concentrates homes and
/// workplaces on a few towers.
const POPULARITY_EXPONENT: f64 = 1.0;

/// How far from home, in grid cells, workplaces and errands lie.
const WORK_RADIUS_CELLS: f64 = 4.0;
const ERRAND_RADIUS_CELLS: f64 = 2.5;

fn draw_second<R: Rng>(rng: &mut R, windows: &[(i64, i64)]) -> i64 {
    let total: i64 = windows.iter().map(|(a, b)| b - a).sum::<i64>() * 3600;
    let mut s = rng.random_range(0..total);
    for (a, b) in windows {
        let len = (b - a) * 3600;
        if s < len {
            return a * 3600 + s;
        }
        s -= len;
    }
    unreachable!("offset lies inside the windows")
}

fn labels<R: Rng>(rng: &mut R, workers: &[WorkerId], gamma: f64) -> BTreeMap<WorkerId, Role> {
    workers
        .iter()
        .map(|&w| {
            let role = if rng.random::<f64>() < gamma {
                Role::Opportunistic
            } else {
                Role::Participatory
            };
            (w, role)
        })
        .collect()
}

pub fn synth_instance(params: &SynthParams) -> Result<Instance, DataError> {
    params.population.check()?;
    if params.num_towers == 0 || params.num_workers == 0 {
        return Err(DataError::Params("tower and worker counts must be at least 1".into()));
    }
    if !(params.area_km > 0.0 && params.area_km.is_finite()) {
        return Err(DataError::Params("area must be positive".into()));
    }
    if !(params.activity > 0.0 && params.activity.is_finite()) {
        return Err(DataError::Params("activity must be positive".into()));
    }
    let pop = &params.population;
    let mut rng = ChaCha8Rng::seed_from_u64(pop.seed);

    let side = (f64::from(params.num_towers)).sqrt().ceil() as u32;
    let cell = params.area_km / f64::from(side);
    let towers: Vec<Tower> = (0..params.num_towers)
        .map(|i| {
            let (gx, gy) = (i % side, i / side);
            Tower {
                id: TowerId(i),
                x: (f64::from(gx) + 0.5 + rng.random_range(-0.3..0.3)) * cell,
                y: (f64::from(gy) + 0.5 + rng.random_range(-0.3..0.3)) * cell,
            }
        })
        .collect();

    let mut ranks: Vec<f64> = (1..=params.num_towers).map(f64::from).collect();
    ranks.shuffle(&mut rng);
    let popularity: BTreeMap<TowerId, f64> = towers
        .iter()
        .zip(&ranks)
        .map(|(t, r)| (t.id, r.powf(-POPULARITY_EXPONENT)))
        .collect();

    let worker_ids: Vec<WorkerId> = (0..params.num_workers).map(WorkerId).collect();
    let roles = labels(&mut rng, &worker_ids, pop.gamma);
    let half = params.area_km / 2.0;

    let mut records = Vec::new();
    for &w in &worker_ids {
        // participatory workers in the skewed layout keep to the eastern half
        let allowed = |t: &Tower| {
            !(params.sparse_west && roles[&w] == Role::Participatory && t.x < half)
        };
        let pool: Vec<&Tower> = towers.iter().filter(|t| allowed(t)).collect();
        let pool = if pool.is_empty() { towers.iter().collect() } else { pool };
        let home = *pool
            .choose_weighted(&mut rng, |t| popularity[&t.id])
            .expect("non-empty pool with positive weights");
        let near = |radius: f64| -> Vec<&Tower> {
            pool.iter()
                .copied()
                .filter(|t| t.id != home.id && manhattan_km(t.point(), home.point()) <= radius)
                .collect()
        };
        let mut anchors: Vec<Anchor> =
            vec![(home.id, rng.random_range(1.0..3.0), &HOME_HOURS)];
        let work_pool = near(WORK_RADIUS_CELLS * cell);
        if let Ok(work) = work_pool.choose_weighted(&mut rng, |t| popularity[&t.id]) {
            anchors.push((work.id, rng.random_range(0.5..2.0), &WORK_HOURS));
        }
        let errand_pool = near(ERRAND_RADIUS_CELLS * cell);
        let errands = rng.random_range(1..=3usize);
        for t in errand_pool.choose_multiple(&mut rng, errands) {
            if anchors.iter().all(|a| a.0 != t.id) {
                anchors.push((t.id, rng.random_range(0.05..0.6), &ERRAND_HOURS));
            }
        }
        for day in 0..=pop.training_days {
            for (tower, lambda, hours) in &anchors {
                let n = Poisson::new(*lambda * params.activity).expect("positive rate").sample(&mut rng) as u64;
                for _ in 0..n {
                    let ts = i64::from(day) * SECONDS_PER_DAY + draw_second(&mut rng, hours);
                    records.push(ConnectionRecord::new(w, *tower, ts));
                }
            }
        }
    }
    assemble(towers, records, &roles, pop, &mut rng)
}

/// Builds an instance from ingested towers and records: labels workers,
/// places tasks and derives participatory attributes from training days.
pub fn instance_from_traces(
    towers: Vec<Tower>,
    records: Vec<ConnectionRecord>,
    max_workers: Option<u32>,
    params: &PopulationParams,
) -> Result<Instance, DataError> {
    params.check()?;
    if towers.is_empty() {
        return Err(DataError::Params("no towers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut users: Vec<WorkerId> = records
        .iter()
        .map(|r| r.worker)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if let Some(cap) = max_workers {
        if (cap as usize) < users.len() {
            users = users.choose_multiple(&mut rng, cap as usize).copied().collect();
            users.sort();
        }
    }
    let keep: BTreeSet<WorkerId> = users.iter().copied().collect();
    let records = records
        .into_iter()
        .filter(|r| keep.contains(&r.worker) && r.day <= params.training_days)
        .collect();
    let roles = labels(&mut rng, &users, params.gamma);
    assemble(towers, records, &roles, params, &mut rng)
}

fn assemble(
    towers: Vec<Tower>,
    mut records: Vec<ConnectionRecord>,
    roles: &BTreeMap<WorkerId, Role>,
    pop: &PopulationParams,
    rng: &mut ChaCha8Rng,
) -> Result<Instance, DataError> {
    records.sort_by_key(|r| (r.worker, r.timestamp, r.tower));
    let mut by_worker: BTreeMap<WorkerId, Vec<ConnectionRecord>> = BTreeMap::new();
    for r in records {
        by_worker.entry(r.worker).or_default().push(r);
    }

    let day_start = i64::from(pop.training_days) * SECONDS_PER_DAY;
    let tasks: Vec<Task> = (0..pop.num_tasks)
        .map(|i| Task {
            id: TaskId(i),
            tower: towers[rng.random_range(0..towers.len())].id,
            sensing_start: day_start + SENSING_START_SECS,
            sensing_end: day_start + SENSING_END_SECS,
        })
        .collect();

    let points: BTreeMap<TowerId, (f64, f64)> = towers.iter().map(|t| (t.id, (t.x, t.y))).collect();
    let tower_ids: Vec<TowerId> = towers.iter().map(|t| t.id).collect();
    let accept = Normal::new(pop.mu_accept, pop.sigma_accept)
        .map_err(|e| DataError::Params(e.to_string()))?;

    let mut opportunistic = Vec::new();
    let mut participatory = Vec::new();
    for (&id, &role) in roles {
        let history = by_worker.remove(&id).unwrap_or_default();
        match role {
            Role::Opportunistic => opportunistic.push(OpportunisticCandidate { id, history }),
            Role::Participatory => {
                let training: Vec<&ConnectionRecord> =
                    history.iter().filter(|r| r.day < pop.training_days).collect();
                let profile = build_profile(training.iter().copied(), pop.training_days)
                    .expect("records filtered to the training window");
                let position = most_frequent_tower(&profile, id, &tower_ids, rng)
                    .expect("towers are non-empty");
                let mut visited: Vec<(f64, f64)> =
                    training.iter().map(|r| points[&r.tower]).collect();
                visited.push(points[&position]);
                let region = Region {
                    min_x: visited.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - REGION_MARGIN_KM,
                    min_y: visited.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - REGION_MARGIN_KM,
                    max_x: visited.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + REGION_MARGIN_KM,
                    max_y: visited.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + REGION_MARGIN_KM,
                };
                participatory.push(ParticipatoryCandidate {
                    id,
                    history,
                    region,
                    max_tasks: rng.random_range(2..=5),
                    acceptance_rate: accept.sample(rng).clamp(0.0, 1.0),
                    online_position: Some(position),
                });
            }
        }
    }
    Ok(Instance {
        towers,
        tasks,
        opportunistic,
        participatory,
        budget: pop.budget,
        training_days: pop.training_days,
    })
}
