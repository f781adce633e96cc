//! Acceptance criteria, each reported as one PASS/FAIL line on stderr.
//!
//! Lines are written straight to the stderr handle so they show up even when
//! the harness captures test output.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::LN_2;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use hytasker::dataio::{synth_instance, SynthParams};
use hytasker::entropy::{location_entropy, task_weights, TaskWeights};
use hytasker::experiment::{results_csv, run_sweep, ExperimentConfig, InstanceSource};
use hytasker::flow::{assign_min_cost, build_network, enumerate_task_sets, OnlineWorker, OpenTask};
use hytasker::mobility::{visit_probability, visit_probability_from_rate, MobilityProfile};
use hytasker::model::{Point, Region, Task, TaskId, TowerId, WorkerId, SECONDS_PER_DAY};
use hytasker::montecarlo::set_completion_prob;
use hytasker::selection::{run_strategy, utility, OfflineTrace, RunConfig, Strategy};

/// Values evaluated independently at 40 significant digits, rounded to f64.
const ONE_MINUS_E_NEG_2: f64 = 0.864_664_716_763_387_3;
const ENTROPY_2_1_1: f64 = 1.039_720_770_839_918;
const WEIGHT_ZERO_ENTROPY: f64 = 0.999_998_557_309_121_8;
const WEIGHT_LN2_ENTROPY: f64 = 1.442_690_878_163_012e-6;

/// Exactness, budget, accounting and determinism properties abort the test.
const HARD: [u8; 6] = [1, 2, 3, 4, 8, 9];
/// Statistical trends and timing are reported without aborting.
const TREND: [u8; 4] = [5, 6, 7, 10];

const CLOSED_FORM_TOL: f64 = 1e-12;
const SEEDS: u64 = 20;
const BUDGETS: [f64; 5] = [200.0, 400.0, 600.0, 800.0, 1000.0];
const FIXTURE_BUDGET: f64 = 800.0;
const BASELINES: [Strategy; 3] = [Strategy::Opp, Strategy::Par, Strategy::BpHybrid];
const VARIANTS: [Strategy; 2] = [Strategy::HyTaskerEqual, Strategy::HyTaskerVisitFreq];

struct Verdict {
    id: u8,
    pass: bool,
    detail: String,
}

fn say(v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {:>2} [{tag}] {}\n", v.id, v.detail);
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CLOSED_FORM_TOL
}

fn rates_from_alphas(rows: &[(u32, u32, f64)]) -> MobilityProfile {
    MobilityProfile::from_rates(
        rows.iter()
            .map(|&(w, t, a)| ((WorkerId(w), TowerId(t)), -(1.0 - a).ln())),
        1,
    )
}

fn task(id: u32, tower: u32) -> Task {
    Task {
        id: TaskId(id),
        tower: TowerId(tower),
        sensing_start: SECONDS_PER_DAY,
        sensing_end: SECONDS_PER_DAY + 3600,
    }
}

fn weights(pairs: &[(u32, f64)]) -> TaskWeights {
    TaskWeights {
        entropy: BTreeMap::new(),
        weight: pairs.iter().map(|&(t, w)| (TaskId(t), w)).collect(),
    }
}

fn criterion_1() -> Verdict {
    let mut bad: Vec<&str> = Vec::new();
    let mut check = |name: &'static str, ok: bool| {
        if !ok {
            bad.push(name);
        }
    };

    check("alpha(0)", visit_probability_from_rate(0.0) == 0.0);
    check("alpha(ln 2)", close(visit_probability_from_rate(LN_2), 0.5));
    check("alpha(2)", close(visit_probability_from_rate(2.0), ONE_MINUS_E_NEG_2));
    let p = MobilityProfile::from_rates([((WorkerId(1), TowerId(3)), 2.0)], 9);
    check("alpha via profile", close(visit_probability(&p, WorkerId(1), TowerId(3)), ONE_MINUS_E_NEG_2));

    let p = rates_from_alphas(&[(1, 0, 0.5), (2, 0, 0.5), (3, 1, 0.2), (4, 1, 0.3), (5, 1, 0.5)]);
    check("phi empty", set_completion_prob(&p, TowerId(0), &[]) == 0.0);
    check("phi 0.5,0.5", close(set_completion_prob(&p, TowerId(0), &[WorkerId(1), WorkerId(2)]), 0.75));
    check(
        "phi 0.2,0.3,0.5",
        close(set_completion_prob(&p, TowerId(1), &[WorkerId(3), WorkerId(4), WorkerId(5)]), 0.72),
    );

    check("entropy single", location_entropy(&[7]) == 0.0);
    check("entropy 1,1", close(location_entropy(&[1, 1]), LN_2));
    check("entropy 2,1,1", close(location_entropy(&[2, 1, 1]), ENTROPY_2_1_1));

    let equal: BTreeMap<TaskId, f64> = (0..4).map(|i| (TaskId(i), 0.3)).collect();
    let w = task_weights(&equal, 1e-6).unwrap();
    check("weights equal", w.weight.values().all(|&x| close(x, 0.25)));
    let two = BTreeMap::from([(TaskId(0), 0.0), (TaskId(1), LN_2)]);
    let w = task_weights(&two, 1e-6).unwrap();
    check("weights smoothed", close(w.get(TaskId(0)), WEIGHT_ZERO_ENTROPY) && close(w.get(TaskId(1)), WEIGHT_LN2_ENTROPY));
    let one = BTreeMap::from([(TaskId(5), 0.9)]);
    check("weights single", close(task_weights(&one, 1e-6).unwrap().get(TaskId(5)), 1.0));

    let tasks = [task(0, 0), task(1, 1)];
    let p = rates_from_alphas(&[(1, 0, 0.6)]);
    check("utility empty", utility(&[], &weights(&[(0, 1.0)]), &p, &tasks[..1]) == 0.0);
    check("utility single", close(utility(&[WorkerId(1)], &weights(&[(0, 1.0)]), &p, &tasks[..1]), 0.6));
    // a rate of 50 gives alpha = 1 - e^-50, which rounds to exactly 1
    let p = MobilityProfile::from_rates(
        [((WorkerId(1), TowerId(0)), LN_2), ((WorkerId(1), TowerId(1)), 50.0)],
        1,
    );
    check(
        "utility weighted",
        close(utility(&[WorkerId(1)], &weights(&[(0, 0.75), (1, 0.25)]), &p, &tasks), 0.625),
    );

    Verdict {
        id: 1,
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("closed forms match hand values within {CLOSED_FORM_TOL:e}")
        } else {
            format!("mismatches: {}", bad.join(", "))
        },
    }
}

fn manhattan(a: Point, b: Point) -> f64 {
    (a.x - b.x).abs() + (a.y - b.y).abs()
}

/// Shortest open tour by trying every visiting order.
fn tour_km(start: Point, stops: &[Point]) -> f64 {
    fn go(at: Point, left: &mut Vec<Point>) -> f64 {
        if left.is_empty() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for i in 0..left.len() {
            let p = left.remove(i);
            best = best.min(manhattan(at, p) + go(p, left));
            left.insert(i, p);
        }
        best
    }
    go(start, &mut stops.to_vec())
}

struct FlowCase {
    workers: Vec<OnlineWorker>,
    open: Vec<OpenTask>,
}

fn flow_case(rng: &mut ChaCha8Rng) -> FlowCase {
    let grid = |rng: &mut ChaCha8Rng| Point::new(f64::from(rng.random_range(0..7)), f64::from(rng.random_range(0..7)));
    let workers = (0..rng.random_range(1..=3u32))
        .map(|i| {
            let position = grid(rng);
            let r = f64::from(rng.random_range(1..=4));
            OnlineWorker {
                id: WorkerId(i),
                position,
                region: Region {
                    min_x: position.x - r,
                    min_y: position.y - r,
                    max_x: position.x + r,
                    max_y: position.y + r,
                },
                max_tasks: rng.random_range(1..=2),
                acceptance_rate: 1.0,
            }
        })
        .collect();
    let open = (0..rng.random_range(1..=6u32))
        .map(|i| OpenTask {
            id: TaskId(i),
            point: grid(rng),
        })
        .collect();
    FlowCase { workers, open }
}

/// Most tasks coverable by disjoint per-worker sets, and the cheapest way.
fn exhaustive(case: &FlowCase, per_km: f64) -> (usize, f64) {
    let options: Vec<Vec<(u32, f64)>> = case
        .workers
        .iter()
        .map(|w| {
            let inside: Vec<usize> = (0..case.open.len())
                .filter(|&i| w.region.contains(case.open[i].point))
                .collect();
            let mut out = vec![(0u32, 0.0)];
            for sub in 1u32..(1 << inside.len()) {
                if sub.count_ones() > w.max_tasks {
                    continue;
                }
                let mut mask = 0u32;
                let mut stops = Vec::new();
                for (b, &i) in inside.iter().enumerate() {
                    if sub >> b & 1 == 1 {
                        mask |= 1 << i;
                        stops.push(case.open[i].point);
                    }
                }
                out.push((mask, per_km * tour_km(w.position, &stops)));
            }
            out
        })
        .collect();
    let mut best = (0usize, 0.0f64);
    let mut stack = vec![(0usize, 0u32, 0.0f64)];
    while let Some((k, used, cost)) = stack.pop() {
        if k == options.len() {
            let n = used.count_ones() as usize;
            if n > best.0 || (n == best.0 && cost < best.1) {
                best = (n, cost);
            }
            continue;
        }
        for &(mask, c) in &options[k] {
            if mask & used == 0 {
                stack.push((k + 1, used | mask, cost + c));
            }
        }
    }
    best
}

fn criterion_2() -> Verdict {
    const CASES: usize = 500;
    const PER_KM: f64 = 10.0;
    // ample, so the optimum is limited by regions and capacities only
    const BUDGET: f64 = 1e9;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    for n in 0..CASES {
        let case = flow_case(&mut rng);
        let sets: Vec<_> = case
            .workers
            .iter()
            .flat_map(|w| enumerate_task_sets(w, &case.open, usize::MAX).unwrap())
            .collect();
        let net = build_network(&case.workers, &sets, &case.open, PER_KM);
        let got = assign_min_cost(&net, BUDGET);
        let (count, spend) = exhaustive(&case, PER_KM);

        let mut seen = BTreeSet::new();
        let mut valid = true;
        let mut paid = 0.0;
        for (w, set) in &got.pairs {
            let worker = case.workers.iter().find(|x| x.id == *w).unwrap();
            let stops: Vec<Point> = set
                .tasks
                .iter()
                .map(|t| case.open.iter().find(|o| o.id == *t).unwrap().point)
                .collect();
            valid &= set.tasks.len() <= worker.max_tasks as usize;
            valid &= stops.iter().all(|&p| worker.region.contains(p));
            valid &= set.tasks.iter().all(|t| seen.insert(*t));
            valid &= (set.tour_km - tour_km(worker.position, &stops)).abs() <= 1e-9;
            paid += PER_KM * set.tour_km;
        }
        valid &= seen == got.covered_tasks && (paid - got.travel_spend).abs() <= 1e-9;
        if !(valid && got.flow_value() == count && got.travel_spend <= spend + 1e-9) {
            failures.push(format!("case {n}: {} tasks for {} vs {count} for {spend}", got.flow_value(), got.travel_spend));
        }
    }
    Verdict {
        id: 2,
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{CASES} random instances match exhaustive search (coverage equal, spend no higher)")
        } else {
            format!("{} of {CASES} differ, first: {}", failures.len(), failures[0])
        },
    }
}

fn criterion_3() -> Verdict {
    const DRAWS: usize = 1000;
    // slack for summation rounding; the properties hold exactly in real arithmetic
    const SLACK: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    for _ in 0..DRAWS {
        let towers = rng.random_range(1..=6u32);
        let workers = rng.random_range(2..=7u32);
        let raw: Vec<f64> = (0..towers).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let w = weights(&raw.iter().enumerate().map(|(i, x)| (i as u32, x / total)).collect::<Vec<_>>());
        let rows: Vec<(u32, u32, f64)> = (0..workers)
            .flat_map(|j| (0..towers).map(move |t| (j, t)))
            .filter_map(|(j, t)| {
                let a: f64 = rng.random::<f64>() * 0.99;
                (rng.random::<f64>() < 0.7).then_some((j, t, a))
            })
            .collect();
        let p = rates_from_alphas(&rows);
        let tasks: Vec<Task> = (0..towers).map(|i| task(i, i)).collect();

        let extra = WorkerId(rng.random_range(0..workers));
        let big: Vec<WorkerId> = (0..workers)
            .map(WorkerId)
            .filter(|&x| x != extra && rng.random::<bool>())
            .collect();
        let small: Vec<WorkerId> = big.iter().copied().filter(|_| rng.random::<bool>()).collect();
        let plus = |s: &[WorkerId]| [s, &[extra]].concat();
        let gain = |s: &[WorkerId]| utility(&plus(s), &w, &p, &tasks) - utility(s, &w, &p, &tasks);
        if gain(&small) < gain(&big) - SLACK || gain(&big) < -SLACK {
            violations += 1;
        }
        for t in 0..towers {
            let t = TowerId(t);
            if set_completion_prob(&p, t, &plus(&big)) < set_completion_prob(&p, t, &big)
                || set_completion_prob(&p, t, &big) < set_completion_prob(&p, t, &small)
            {
                violations += 1;
            }
        }
    }
    Verdict {
        id: 3,
        pass: violations == 0,
        detail: format!("{DRAWS} random draws, {violations} violations of diminishing returns or monotone completion"),
    }
}

#[derive(Debug, Clone)]
struct Outcome {
    strategy: Strategy,
    sparse: bool,
    budget: f64,
    seed: u64,
    completed: usize,
    spend: (f64, f64),
    candidates: usize,
    trace: OfflineTrace,
}

fn fixture(seed: u64, budget: f64, sparse: bool) -> SynthParams {
    let mut p = SynthParams {
        sparse_west: sparse,
        ..SynthParams::default()
    };
    p.population.seed = seed;
    p.population.budget.total = budget;
    p
}

fn run_all(budget: f64, sparse: bool, strategies: &[Strategy]) -> Vec<Outcome> {
    (0..SEEDS)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let instance = synth_instance(&fixture(seed, budget, sparse)).unwrap();
            let cfg = RunConfig {
                seed,
                ..RunConfig::default()
            };
            strategies
                .iter()
                .map(|&strategy| {
                    let o = run_strategy(strategy, &instance, &cfg).unwrap();
                    Outcome {
                        strategy,
                        sparse,
                        budget,
                        seed,
                        completed: o.result.completed_tasks.len(),
                        spend: (o.result.opp_spend, o.result.par_spend),
                        candidates: instance.opportunistic.len(),
                        trace: o.trace,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn mean_completed(runs: &[Outcome], strategy: Strategy, budget: f64) -> f64 {
    let v: Vec<f64> = runs
        .iter()
        .filter(|o| o.strategy == strategy && o.budget == budget)
        .map(|o| o.completed as f64)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_4(runs: &[Outcome]) -> Verdict {
    let over: Vec<&Outcome> = runs.iter().filter(|o| o.spend.0 + o.spend.1 > o.budget).collect();
    Verdict {
        id: 4,
        pass: over.is_empty(),
        detail: match over.first() {
            None => format!("{} runs, none spend beyond the budget", runs.len()),
            Some(o) => format!(
                "{} of {} runs overspend, e.g. {} seed {} at {}: {} + {}",
                over.len(),
                runs.len(),
                o.strategy,
                o.seed,
                o.budget,
                o.spend.0,
                o.spend.1
            ),
        },
    }
}

fn criterion_5(runs: &[Outcome]) -> Verdict {
    let hy = mean_completed(runs, Strategy::HyTasker, FIXTURE_BUDGET);
    let base: Vec<(Strategy, f64)> = BASELINES
        .iter()
        .map(|&s| (s, mean_completed(runs, s, FIXTURE_BUDGET)))
        .collect();
    let within = base.iter().all(|&(_, m)| hy >= m - 1.0);
    let beaten = base.iter().filter(|&&(_, m)| hy > m).count();
    let listed: Vec<String> = base.iter().map(|(s, m)| format!("{s} {m:.2}")).collect();
    Verdict {
        id: 5,
        pass: within && beaten >= 2,
        detail: format!(
            "mean completed over {SEEDS} seeds at B={FIXTURE_BUDGET}: hytasker {hy:.2} vs {}; \
             needs >= each - 1.0 and > at least two (beats {beaten})",
            listed.join(", ")
        ),
    }
}

fn criterion_6(runs: &[Outcome]) -> Verdict {
    let mut worst: Option<(Strategy, f64, f64)> = None;
    let mut lines = Vec::new();
    for s in [Strategy::HyTasker].into_iter().chain(BASELINES) {
        let means: Vec<f64> = BUDGETS.iter().map(|&b| mean_completed(runs, s, b)).collect();
        for (k, pair) in means.windows(2).enumerate() {
            let drop = pair[0] - pair[1];
            if worst.is_none_or(|w| drop > w.2) {
                worst = Some((s, BUDGETS[k + 1], drop));
            }
        }
        let m: Vec<String> = means.iter().map(|m| format!("{m:.1}")).collect();
        lines.push(format!("{s} [{}]", m.join(" ")));
    }
    let (s, b, drop) = worst.unwrap();
    Verdict {
        id: 6,
        pass: drop <= 0.5,
        detail: format!(
            "largest step-down {drop:.2} ({s} at B={b}, tolerance 0.5); means over budgets {BUDGETS:?}: {}",
            lines.join("; ")
        ),
    }
}

fn criterion_7(runs: &[Outcome]) -> Verdict {
    let hy = mean_completed(runs, Strategy::HyTasker, FIXTURE_BUDGET);
    let vs: Vec<(Strategy, f64)> = VARIANTS
        .iter()
        .map(|&s| (s, mean_completed(runs, s, FIXTURE_BUDGET)))
        .collect();
    let listed: Vec<String> = vs.iter().map(|(s, m)| format!("{s} {m:.2}")).collect();
    Verdict {
        id: 7,
        pass: vs.iter().all(|&(_, m)| hy >= m - 0.5),
        detail: format!(
            "skewed participatory density, {SEEDS} seeds: hytasker {hy:.2} vs {}; needs >= each - 0.5",
            listed.join(", ")
        ),
    }
}

fn criterion_8(runs: &[Outcome]) -> Verdict {
    let hytasker = [Strategy::HyTasker, Strategy::HyTaskerEqual, Strategy::HyTaskerVisitFreq];
    let mut checked = 0;
    let mut bad = Vec::new();
    for o in runs.iter().filter(|o| hytasker.contains(&o.strategy)) {
        checked += 1;
        let snaps = &o.trace.snapshots;
        let expected = ((o.budget / 10.0).floor() as usize).min(o.candidates);
        let est: Option<Vec<f64>> = snaps.iter().map(|s| s.estimate).collect();
        let ok_count = snaps.len() == expected
            && snaps.iter().enumerate().all(|(k, s)| s.ordinal == k + 1 && s.workers.len() == k + 1);
        let ok_choice = match (est, o.trace.chosen) {
            (Some(e), Some(c)) => {
                e.iter().all(|&x| x <= e[c]) && e[..c].iter().all(|&x| x < e[c])
            }
            (Some(e), None) => e.is_empty(),
            (None, _) => false,
        };
        if !(ok_count && ok_choice) {
            bad.push(format!("{} seed {} B={} sparse={}", o.strategy, o.seed, o.budget, o.sparse));
        }
    }
    Verdict {
        id: 8,
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{checked} HyTasker runs: snapshot counts and argmax choices (ties to the smaller) hold")
        } else {
            format!("{} of {checked} runs break snapshot accounting, first: {}", bad.len(), bad[0])
        },
    }
}

fn criterion_9(jobs: usize, runs: &[Outcome]) -> Verdict {
    let cfg = ExperimentConfig {
        strategies: vec![Strategy::HyTasker, Strategy::Opp, Strategy::Par, Strategy::BpHybrid],
        budget: vec![400.0, 800.0],
        seeds: vec![0, 1, 2],
        source: InstanceSource::default(),
        ..ExperimentConfig::default()
    };
    let a = run_sweep(&cfg, jobs).unwrap();
    let b = run_sweep(&cfg, 1).unwrap();
    let identical = results_csv(&a) == results_csv(&b);
    // the sweep pipeline and direct runs must agree on shared cells
    let agree = a.iter().all(|r| {
        runs.iter()
            .find(|o| !o.sparse && o.strategy == r.strategy && o.seed == r.seed && o.budget == r.budget)
            .is_none_or(|o| o.completed == r.completed && o.spend == (r.opp_spend, r.par_spend))
    });
    Verdict {
        id: 9,
        pass: identical && agree,
        detail: format!(
            "{} rows rerun with {jobs} and 1 threads: csv {}; matches direct runs: {agree}",
            a.len(),
            if identical { "byte-identical" } else { "differs" }
        ),
    }
}

fn criterion_10(seconds: f64, jobs: usize) -> Verdict {
    Verdict {
        id: 10,
        pass: seconds < 600.0,
        detail: format!(
            "criterion 5 runs ({} strategies x {SEEDS} seeds) took {seconds:.1} s on {jobs} threads (limit 600 s)",
            1 + BASELINES.len()
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut verdicts = Vec::new();
    let mut record = |v: Verdict| {
        say(&v);
        verdicts.push(v);
    };
    record(criterion_1());
    record(criterion_2());
    record(criterion_3());

    let dominance: Vec<Strategy> = [Strategy::HyTasker].into_iter().chain(BASELINES).collect();
    let start = Instant::now();
    let mut runs = run_all(FIXTURE_BUDGET, false, &dominance);
    let fixture_seconds = start.elapsed().as_secs_f64();
    for b in BUDGETS.into_iter().filter(|&b| b != FIXTURE_BUDGET) {
        runs.extend(run_all(b, false, &dominance));
    }
    let ablation: Vec<Strategy> = [Strategy::HyTasker].into_iter().chain(VARIANTS).collect();
    let skewed = run_all(FIXTURE_BUDGET, true, &ablation);

    let all: Vec<Outcome> = runs.iter().chain(&skewed).cloned().collect();
    record(criterion_4(&all));
    record(criterion_5(&runs));
    record(criterion_6(&runs));
    record(criterion_7(&skewed));
    record(criterion_8(&all));
    record(criterion_9(jobs, &runs));
    record(criterion_10(fixture_seconds, jobs));

    let failed = |ids: &[u8]| -> Vec<u8> {
        verdicts.iter().filter(|v| !v.pass && ids.contains(&v.id)).map(|v| v.id).collect()
    };
    let trend = failed(&TREND);
    let summary = format!("trend criteria reported as failing: {trend:?}\n");
    let _ = std::io::stderr().write_all(summary.as_bytes());
    let hard = failed(&HARD);
    assert!(hard.is_empty(), "criteria failed: {hard:?}");
}
