//! Successive shortest augmenting paths with a payment-based budget stop.
//!
//! Every task → sink arc has capacity one, and a set arc's capacity equals
//! the number of its task arcs, so set arcs never bind. The set layer
//! therefore reduces to one worker → task arc per reachable task whose unit
//! cost is the cheapest amortised cost over the worker's sets containing it.
//! A worker's flow always lands on a subset of its candidates no larger than
//! `max_tasks`, which is itself one of its task sets; that subset is the
//! worker's single chosen set and is paid on its exact tour.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use super::tour::{bits, SubsetTours};
use super::{nearest_in_region, FlowError, FlowNetwork, OnlineAssignment, OnlineWorker, OpenTask, TaskSet};
use crate::model::{Point, WorkerId};

/// Candidate tasks are tracked as bits of a `u64`.
pub(crate) const MAX_CANDIDATES: usize = 63;

/// One worker's reachable tasks, their amortised unit costs and exact tours.
#[derive(Debug, Clone)]
pub(crate) struct WorkerOptions {
    pub worker: WorkerId,
    pub capacity: usize,
    /// Indices into the open-task slice.
    pub candidates: Vec<usize>,
    /// Cheapest km per unit over subsets containing each candidate.
    pub unit_km: Vec<f64>,
    pub tours: SubsetTours,
}

impl WorkerOptions {
    pub fn build(
        worker: &OnlineWorker,
        open: &[OpenTask],
        neighbor_cap: usize,
    ) -> Result<Self, FlowError> {
        if neighbor_cap < worker.max_tasks as usize {
            return Err(FlowError::NeighborCap {
                worker: worker.id,
                cap: neighbor_cap,
                max_tasks: worker.max_tasks,
            });
        }
        let candidates = nearest_in_region(
            &worker.region,
            worker.position,
            open,
            neighbor_cap.min(MAX_CANDIDATES),
        );
        Self::from_candidates(
            worker.id,
            worker.max_tasks as usize,
            worker.position,
            candidates,
            open,
        )
    }

    pub fn from_candidates(
        worker: WorkerId,
        capacity: usize,
        start: Point,
        candidates: Vec<usize>,
        open: &[OpenTask],
    ) -> Result<Self, FlowError> {
        let points: Vec<Point> = candidates.iter().map(|&i| open[i].point).collect();
        let tours = SubsetTours::build(start, &points, capacity)?;
        let mut unit_km = vec![f64::INFINITY; candidates.len()];
        for mask in tours.masks() {
            let per_unit = tours.km(mask) / f64::from(mask.count_ones());
            for b in bits(mask) {
                if per_unit < unit_km[b] {
                    unit_km[b] = per_unit;
                }
            }
        }
        Ok(WorkerOptions {
            worker,
            capacity,
            candidates,
            unit_km,
            tours,
        })
    }

    /// Every tabulated subset with its tour, ascending by km.
    fn by_km(&self) -> Vec<(f64, u64)> {
        let mut v: Vec<(f64, u64)> = self.tours.masks().map(|m| (self.tours.km(m), m)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v
    }

    fn km(&self, mask: u64) -> f64 {
        if mask == 0 {
            0.0
        } else {
            self.tours.km(mask)
        }
    }

    pub fn task_sets(&self, open: &[OpenTask]) -> Vec<TaskSet> {
        self.tours
            .masks()
            .map(|mask| self.task_set(mask, open))
            .collect()
    }

    fn task_set(&self, mask: u64, open: &[OpenTask]) -> TaskSet {
        TaskSet {
            worker: self.worker,
            tasks: self
                .tours
                .order(mask)
                .into_iter()
                .map(|local| open[self.candidates[local]].id)
                .collect(),
            tour_km: self.tours.km(mask),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    to: usize,
    cap: u32,
    cost: f64,
    rev: usize,
    /// Candidate bit for worker ↔ task edges.
    local: Option<u8>,
}

struct Graph {
    adj: Vec<Vec<Edge>>,
}

impl Graph {
    fn new(n: usize) -> Self {
        Graph {
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: u32, cost: f64, local: Option<u8>) {
        let rf = self.adj[to].len();
        let rt = self.adj[from].len();
        self.adj[from].push(Edge {
            to,
            cap,
            cost,
            rev: rf,
            local,
        });
        self.adj[to].push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
            rev: rt,
            local,
        });
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra on reduced costs, stopping once `sink` is settled. Records the
/// predecessor edge of every reached node.
fn shortest_paths(
    g: &Graph,
    source: usize,
    sink: usize,
    potential: &[f64],
    dist: &mut [f64],
    prev: &mut [Option<(usize, usize)>],
) {
    dist.fill(f64::INFINITY);
    prev.fill(None);
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == sink {
            break;
        }
        for (i, e) in g.adj[u].iter().enumerate() {
            if e.cap == 0 {
                continue;
            }
            // rounding can leave reduced costs a hair below zero
            let reduced = (e.cost + potential[u] - potential[e.to]).max(0.0);
            let nd = d + reduced;
            if nd < dist[e.to] {
                dist[e.to] = nd;
                prev[e.to] = Some((u, i));
                heap.push(Entry(nd, e.to));
            }
        }
    }
}

fn payment_km(options: &[WorkerOptions], masks: &[u64]) -> f64 {
    options
        .iter()
        .zip(masks)
        .filter(|(_, &m)| m != 0)
        .map(|(o, &m)| o.tours.km(m))
        .sum()
}

/// Min-cost assignment over prepared worker options. Without `reduce_spend`
/// the covered set is the same but the spend may be higher.
pub(crate) fn solve(
    options: &[WorkerOptions],
    open: &[OpenTask],
    per_km: f64,
    travel_budget: f64,
    reduce_spend: bool,
) -> OnlineAssignment {
    if travel_budget.is_nan() || travel_budget <= 0.0 || options.is_empty() || open.is_empty() {
        return OnlineAssignment::default();
    }
    let w = options.len();
    let source = 0;
    let task_base = 1 + w;
    let sink = task_base + open.len();
    let mut g = Graph::new(sink + 1);
    for (wi, o) in options.iter().enumerate() {
        if o.candidates.is_empty() {
            continue;
        }
        g.add(source, 1 + wi, o.capacity as u32, 0.0, None);
        for (local, (&ti, &c)) in o.candidates.iter().zip(&o.unit_km).enumerate() {
            g.add(1 + wi, task_base + ti, 1, c, Some(local as u8));
        }
    }
    for ti in 0..open.len() {
        g.add(task_base + ti, sink, 1, 0.0, None);
    }

    let n = sink + 1;
    let mut potential = vec![0.0; n];
    let mut dist = vec![0.0; n];
    let mut prev = vec![None; n];
    let mut masks = vec![0u64; w];
    let mut tentative = masks.clone();

    loop {
        shortest_paths(&g, source, sink, &potential, &mut dist, &mut prev);
        if dist[sink].is_infinite() {
            break;
        }
        let mut path = Vec::new();
        let mut v = sink;
        while let Some((u, i)) = prev[v] {
            path.push((u, i));
            v = u;
        }

        tentative.copy_from_slice(&masks);
        for &(u, i) in &path {
            let e = g.adj[u][i];
            let Some(local) = e.local else { continue };
            if (1..task_base).contains(&u) {
                tentative[u - 1] |= 1u64 << local;
            } else {
                tentative[e.to - 1] &= !(1u64 << local);
            }
        }
        if per_km * payment_km(options, &tentative) > travel_budget {
            break;
        }
        masks.copy_from_slice(&tentative);

        for &(u, i) in &path {
            let rev = g.adj[u][i].rev;
            let to = g.adj[u][i].to;
            g.adj[u][i].cap -= 1;
            g.adj[to][rev].cap += 1;
        }
        // capping at the sink distance keeps every residual reduced cost non-negative
        let reach = dist[sink];
        for (p, d) in potential.iter_mut().zip(&dist) {
            *p += d.min(reach);
        }
    }

    if reduce_spend {
        refine(options, open.len(), &mut masks);
        exact_refine(options, &mut masks);
    }
    assemble(options, open, per_km, &masks)
}

const IMPROVEMENT: f64 = 1e-9;
const MAX_REFINE_PASSES: usize = 64;

/// Local search over chosen sets that keeps the covered count and strictly
/// lowers the total tour length. Spend only falls, so the budget still holds.
fn refine(options: &[WorkerOptions], n_open: usize, masks: &mut [u64]) {
    let mut owner: Vec<Option<usize>> = vec![None; n_open];
    for (w, o) in options.iter().enumerate() {
        for b in bits(masks[w]) {
            owner[o.candidates[b]] = Some(w);
        }
    }
    let sorted: Vec<Vec<(f64, u64)>> = options.iter().map(WorkerOptions::by_km).collect();
    for _ in 0..MAX_REFINE_PASSES {
        let mut improved = false;
        for (k, by_km) in sorted.iter().enumerate() {
            improved |= reselect_one(options, by_km, masks, &mut owner, k);
        }
        for j in 0..options.len() {
            if masks[j] == 0 {
                continue;
            }
            for k in 0..options.len() {
                if k != j && interacts(options, masks, &owner, j, k) {
                    improved |= reselect_pair(options, &sorted, masks, &mut owner, j, k);
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Joint set choices above this count skip the exact search.
const EXACT_CHOICES: f64 = 1e6;

/// Replaces `masks` with the cheapest disjoint choice covering at least as
/// many tasks, when the joint choice space is small enough to search.
fn exact_refine(options: &[WorkerOptions], masks: &mut [u64]) {
    let choices: f64 = options.iter().map(|o| 1.0 + o.tours.len() as f64).product();
    if choices > EXACT_CHOICES {
        return;
    }
    let need: u32 = masks.iter().map(|m| m.count_ones()).sum();
    // per worker: (km, open-task bitset) ascending by km, empty first
    let sets: Vec<Vec<(f64, Vec<usize>, u64)>> = options
        .iter()
        .map(|o| {
            std::iter::once((0.0, Vec::new(), 0u64))
                .chain(o.by_km().into_iter().map(|(km, m)| (km, bits(m).map(|b| o.candidates[b]).collect(), m)))
                .collect()
        })
        .collect();
    // capacity still available from worker k onward
    let mut reach = vec![0u32; options.len() + 1];
    for k in (0..options.len()).rev() {
        reach[k] = reach[k + 1] + options[k].capacity.min(options[k].candidates.len()) as u32;
    }

    struct Search<'s> {
        sets: &'s [Vec<(f64, Vec<usize>, u64)>],
        reach: &'s [u32],
        need: u32,
        used: BTreeSet<usize>,
        pick: Vec<u64>,
        best_km: f64,
        best: Option<Vec<u64>>,
    }
    impl Search<'_> {
        fn go(&mut self, k: usize, km: f64, count: u32) {
            if count + self.reach[k] < self.need {
                return;
            }
            if k == self.sets.len() {
                if km < self.best_km - IMPROVEMENT {
                    self.best_km = km;
                    self.best = Some(self.pick.clone());
                }
                return;
            }
            for (set_km, tasks, m) in &self.sets[k] {
                // ascending km, so later sets cannot beat the bound either
                if km + set_km >= self.best_km - IMPROVEMENT {
                    break;
                }
                if tasks.iter().any(|t| self.used.contains(t)) {
                    continue;
                }
                self.used.extend(tasks);
                self.pick[k] = *m;
                self.go(k + 1, km + set_km, count + tasks.len() as u32);
                for t in tasks {
                    self.used.remove(t);
                }
            }
            self.pick[k] = 0;
        }
    }
    let mut search = Search {
        sets: &sets,
        reach: &reach,
        need,
        used: BTreeSet::new(),
        pick: vec![0; options.len()],
        best_km: payment_km(options, masks),
        best: None,
    };
    search.go(0, 0.0, 0);
    if let Some(best) = search.best {
        masks.copy_from_slice(&best);
    }
}

/// Candidate bits of worker `w` whose task is free or owned by one of `allowed`.
fn pool(options: &[WorkerOptions], owner: &[Option<usize>], w: usize, allowed: &[usize]) -> u64 {
    options[w]
        .candidates
        .iter()
        .enumerate()
        .filter(|(_, &t)| owner[t].is_none_or(|o| allowed.contains(&o)))
        .fold(0u64, |m, (b, _)| m | (1u64 << b))
}

/// Whether either worker could take one of the other's tasks.
fn interacts(options: &[WorkerOptions], masks: &[u64], owner: &[Option<usize>], j: usize, k: usize) -> bool {
    let takes = |a: usize, b: usize| options[a].candidates.iter().any(|&t| owner[t] == Some(b));
    (masks[j] != 0 && takes(k, j)) || (masks[k] != 0 && takes(j, k))
}

fn set_mask(options: &[WorkerOptions], masks: &mut [u64], owner: &mut [Option<usize>], w: usize, mask: u64) {
    for b in bits(masks[w]) {
        owner[options[w].candidates[b]] = None;
    }
    for b in bits(mask) {
        let t = options[w].candidates[b];
        if let Some(prev) = owner[t] {
            if prev != w {
                let local = options[prev]
                    .candidates
                    .iter()
                    .position(|&c| c == t)
                    .expect("owner holds the task as a candidate");
                masks[prev] &= !(1u64 << local);
            }
        }
        owner[t] = Some(w);
    }
    masks[w] = mask;
}

/// Worker `k` re-chooses its set, possibly taking tasks from others.
fn reselect_one(
    options: &[WorkerOptions],
    sorted: &[(f64, u64)],
    masks: &mut [u64],
    owner: &mut [Option<usize>],
    k: usize,
) -> bool {
    let o = &options[k];
    let own = masks[k];
    let own_km = o.km(own);
    // the most any move can save by trimming other workers' tours
    let mut others: Vec<usize> = o
        .candidates
        .iter()
        .filter_map(|&t| owner[t].filter(|&w| w != k))
        .collect();
    others.sort_unstable();
    others.dedup();
    let max_saving: f64 = others.iter().map(|&w| options[w].km(masks[w])).sum();
    let mut best: Option<(f64, u64)> = None;
    for &(km, m) in sorted {
        if km - own_km - max_saving >= -IMPROVEMENT {
            break;
        }
        if m == own {
            continue;
        }
        let mut newly = 0u32;
        let mut delta = km - own_km;
        let mut losers: Vec<(usize, u64)> = Vec::new();
        for b in bits(m) {
            let t = o.candidates[b];
            match owner[t] {
                None => newly += 1,
                Some(w) if w == k => {}
                Some(w) => {
                    let local = options[w].candidates.iter().position(|&c| c == t).unwrap();
                    match losers.iter_mut().find(|(x, _)| *x == w) {
                        Some(entry) => entry.1 |= 1u64 << local,
                        None => losers.push((w, 1u64 << local)),
                    }
                }
            }
        }
        let dropped = (own & !m).count_ones();
        if newly < dropped {
            continue;
        }
        for &(w, lost) in &losers {
            delta += options[w].km(masks[w] & !lost) - options[w].km(masks[w]);
        }
        if delta < -IMPROVEMENT && best.is_none_or(|(d, _)| delta < d) {
            best = Some((delta, m));
        }
    }
    match best {
        Some((_, m)) => {
            set_mask(options, masks, owner, k, m);
            true
        }
        None => false,
    }
}

/// Workers `j` and `k` jointly re-choose their sets from their own tasks and
/// free ones.
fn reselect_pair(
    options: &[WorkerOptions],
    sorted: &[Vec<(f64, u64)>],
    masks: &mut [u64],
    owner: &mut [Option<usize>],
    j: usize,
    k: usize,
) -> bool {
    let (oj, ok) = (&options[j], &options[k]);
    let pool_j = pool(options, owner, j, &[j, k]);
    let pool_k = pool(options, owner, k, &[j, k]);
    let current = oj.km(masks[j]) + ok.km(masks[k]);
    let need = masks[j].count_ones() + masks[k].count_ones();
    // j-local bit -> k-local bit, for disjointness checks
    let translate: Vec<Option<usize>> = oj
        .candidates
        .iter()
        .map(|t| ok.candidates.iter().position(|c| c == t))
        .collect();
    let to_k = |m: u64| -> u64 {
        bits(m)
            .filter_map(|b| translate[b])
            .fold(0u64, |acc, b| acc | (1u64 << b))
    };

    let mut best: Option<(f64, u64, u64)> = None;
    let empty = [(0.0, 0u64)];
    for &(kmj, mj) in empty.iter().chain(&sorted[j]) {
        if kmj >= current - IMPROVEMENT {
            break;
        }
        if mj & !pool_j != 0 {
            continue;
        }
        let blocked = to_k(mj);
        for &(kmk, mk) in empty.iter().chain(&sorted[k]) {
            let total = kmj + kmk;
            if total >= current - IMPROVEMENT || best.is_some_and(|(b, _, _)| total >= b) {
                break;
            }
            if mk & !pool_k != 0 || mk & blocked != 0 {
                continue;
            }
            if mj.count_ones() + mk.count_ones() < need {
                continue;
            }
            best = Some((total, mj, mk));
        }
    }
    match best {
        Some((_, mj, mk)) if (mj, mk) != (masks[j], masks[k]) => {
            set_mask(options, masks, owner, j, 0);
            set_mask(options, masks, owner, k, 0);
            set_mask(options, masks, owner, j, mj);
            set_mask(options, masks, owner, k, mk);
            true
        }
        _ => false,
    }
}

fn assemble(
    options: &[WorkerOptions],
    open: &[OpenTask],
    per_km: f64,
    masks: &[u64],
) -> OnlineAssignment {
    let mut pairs = Vec::new();
    let mut covered = BTreeSet::new();
    for (o, &m) in options.iter().zip(masks) {
        if m == 0 {
            continue;
        }
        let set = o.task_set(m, open);
        covered.extend(set.tasks.iter().copied());
        pairs.push((o.worker, set));
    }
    OnlineAssignment {
        pairs,
        covered_tasks: covered,
        travel_spend: per_km * payment_km(options, masks),
    }
}

/// Runs the budget-stopped min-cost flow on an explicit network.
///
/// Each worker's sets are taken to be every subset, up to its `max_tasks`,
/// of the tasks its arcs reach, which is what [`super::enumerate_task_sets`]
/// produces.
pub fn assign_min_cost(network: &FlowNetwork, travel_budget: f64) -> OnlineAssignment {
    let open: Vec<OpenTask> = network
        .tasks
        .iter()
        .map(|t| OpenTask {
            id: t.task,
            point: t.point,
        })
        .collect();
    let task_of_node = |node: usize| network.tasks.iter().position(|t| t.node == node);

    let mut options = Vec::with_capacity(network.workers.len());
    for (wi, wn) in network.workers.iter().enumerate() {
        // cheapest amortised unit cost to each task over this worker's sets
        let mut best: Vec<(usize, f64)> = Vec::new();
        for sn in network.task_sets.iter().filter(|s| s.owner == wi) {
            let Some(set_arc) = network
                .arcs
                .iter()
                .find(|a| a.from == wn.node && a.to == sn.node)
            else {
                continue;
            };
            for a in network.arcs.iter().filter(|a| a.from == sn.node) {
                let Some(ti) = task_of_node(a.to) else { continue };
                match best.iter_mut().find(|(t, _)| *t == ti) {
                    Some(entry) => entry.1 = entry.1.min(set_arc.unit_cost),
                    None => best.push((ti, set_arc.unit_cost)),
                }
            }
        }
        best.sort_by(|a, b| {
            manhattan(wn.position, open[a.0].point)
                .total_cmp(&manhattan(wn.position, open[b.0].point))
                .then(open[a.0].id.cmp(&open[b.0].id))
        });
        best.truncate(MAX_CANDIDATES);
        // drop the farthest candidates until the subset table fits
        let mut o = loop {
            let candidates: Vec<usize> = best.iter().map(|(t, _)| *t).collect();
            match WorkerOptions::from_candidates(
                wn.worker,
                wn.max_tasks as usize,
                wn.position,
                candidates,
                &open,
            ) {
                Ok(o) => break o,
                Err(_) => {
                    best.pop();
                }
            }
        };
        let per_km = network.per_km;
        o.unit_km = best
            .iter()
            .map(|(_, c)| if per_km > 0.0 { c / per_km } else { 0.0 })
            .collect();
        options.push(o);
    }
    solve(&options, &open, network.per_km, travel_budget, true)
}

fn manhattan(a: Point, b: Point) -> f64 {
    super::manhattan_km(a, b)
}
