//! Exhaustive reference assignment for small instances.
//!
//! Tries every combination of "no set" or one subset of in-region tasks per
//! worker, scoring by covered-task count, then by spend. Tours come from the
//! permutation search only.

use super::{shortest_tour, OnlineWorker, OpenTask};
use crate::model::Point;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleBest {
    pub covered: usize,
    pub spend: f64,
}

fn subsets_up_to(items: &[usize], max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &it in items {
        let mut extra = Vec::new();
        for s in &out {
            if s.len() < max {
                let mut t = s.clone();
                t.push(it);
                extra.push(t);
            }
        }
        out.extend(extra);
    }
    out
}

pub fn brute_force(
    workers: &[OnlineWorker],
    open: &[OpenTask],
    per_km: f64,
    travel_budget: f64,
) -> OracleBest {
    let options: Vec<Vec<(u64, f64)>> = workers
        .iter()
        .map(|w| {
            let reachable: Vec<usize> = (0..open.len())
                .filter(|&i| w.region.contains(open[i].point))
                .collect();
            subsets_up_to(&reachable, w.max_tasks as usize)
                .into_iter()
                .map(|s| {
                    if s.is_empty() {
                        return (0u64, 0.0);
                    }
                    let pts: Vec<Point> = s.iter().map(|&i| open[i].point).collect();
                    let (_, km) = shortest_tour(w.position, &pts).unwrap();
                    (s.iter().fold(0u64, |m, &i| m | (1 << i)), km)
                })
                .collect()
        })
        .collect();

    let mut best = OracleBest {
        covered: 0,
        spend: 0.0,
    };
    let mut idx = vec![0usize; workers.len()];
    if travel_budget <= 0.0 {
        return best;
    }
    loop {
        let mut mask = 0u64;
        let mut km = 0.0;
        for (w, &i) in idx.iter().enumerate() {
            mask |= options[w][i].0;
            km += options[w][i].1;
        }
        let spend = per_km * km;
        if spend <= travel_budget {
            let covered = mask.count_ones() as usize;
            if covered > best.covered || (covered == best.covered && spend < best.spend) {
                best = OracleBest { covered, spend };
            }
        }
        // odometer increment
        let mut w = 0;
        loop {
            if w == idx.len() {
                return best;
            }
            idx[w] += 1;
            if idx[w] < options[w].len() {
                break;
            }
            idx[w] = 0;
            w += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{assign_online, OnlineAssignment};
    use crate::model::{Region, TaskId, WorkerId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(rng: &mut ChaCha8Rng, max_workers: u32, max_tasks: u32, max_l: u32) -> (Vec<OnlineWorker>, Vec<OpenTask>) {
        let nw = rng.random_range(1..=max_workers);
        let nt = rng.random_range(1..=max_tasks);
        let ws = (0..nw)
            .map(|i| {
                let x = f64::from(rng.random_range(0..6));
                let y = f64::from(rng.random_range(0..6));
                let r = rng.random_range(1.0..4.0);
                OnlineWorker {
                    id: WorkerId(i),
                    position: Point::new(x, y),
                    region: Region {
                        min_x: x - r,
                        min_y: y - r,
                        max_x: x + r,
                        max_y: y + r,
                    },
                    max_tasks: rng.random_range(1..=max_l),
                    acceptance_rate: 1.0,
                }
            })
            .collect();
        let ts = (0..nt)
            .map(|i| OpenTask {
                id: TaskId(i),
                point: Point::new(
                    f64::from(rng.random_range(0..6)),
                    f64::from(rng.random_range(0..6)),
                ),
            })
            .collect();
        (ws, ts)
    }

    fn run(ws: &[OnlineWorker], ts: &[OpenTask], budget: f64) -> OnlineAssignment {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assign_online(ws, ts, budget, 10.0, usize::MAX, &mut rng, false).unwrap()
    }

    #[test]
    fn matches_exhaustive_search_with_ample_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..500 {
            let (ws, ts) = random_case(&mut rng, 3, 6, 2);
            let got = run(&ws, &ts, 1e9);
            let best = brute_force(&ws, &ts, 10.0, 1e9);
            assert_eq!(got.flow_value(), best.covered, "case {case}");
            assert!(got.travel_spend <= best.spend + 1e-9, "case {case}");
        }
    }

    #[test]
    fn budget_is_respected_and_coverage_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for case in 0..300 {
            let (ws, ts) = random_case(&mut rng, 4, 8, 3);
            let mut last = 0;
            for budget in [0.0, 10.0, 25.0, 40.0, 60.0, 90.0, 150.0, 400.0] {
                let a = run(&ws, &ts, budget);
                assert!(a.travel_spend <= budget, "case {case} budget {budget}");
                assert!(a.flow_value() >= last, "case {case} budget {budget}");
                assert!(a.flow_value() <= brute_force(&ws, &ts, 10.0, budget).covered);
                last = a.flow_value();
                let mut seen = std::collections::BTreeSet::new();
                for (w, set) in &a.pairs {
                    let worker = ws.iter().find(|x| x.id == *w).unwrap();
                    assert!(set.tasks.len() <= worker.max_tasks as usize);
                    for t in &set.tasks {
                        assert!(seen.insert(*t));
                        let p = ts.iter().find(|x| x.id == *t).unwrap().point;
                        assert!(worker.region.contains(p));
                    }
                }
            }
        }
    }

    #[test]
    fn cheapest_cover_needs_three_way_exchange() {
        let w = |id, x, y, r: [f64; 4], l| OnlineWorker {
            id: WorkerId(id),
            position: Point::new(x, y),
            region: Region {
                min_x: r[0],
                min_y: r[1],
                max_x: r[2],
                max_y: r[3],
            },
            max_tasks: l,
            acceptance_rate: 1.0,
        };
        let ws = [
            w(0, 5.0, 4.0, [1.0, 0.0, 9.0, 8.0], 2),
            w(1, 1.0, 4.0, [-1.0, 2.0, 3.0, 6.0], 1),
            w(2, 2.0, 3.0, [1.0, 2.0, 3.0, 4.0], 2),
        ];
        let ts: Vec<OpenTask> = [(1.0, 2.0), (6.0, 2.0), (3.0, 6.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| OpenTask {
                id: TaskId(i as u32),
                point: Point::new(x, y),
            })
            .collect();
        let got = run(&ws, &ts, 1e9);
        assert_eq!(got.flow_value(), 3);
        assert_eq!(got.travel_spend, brute_force(&ws, &ts, 10.0, 1e9).spend);
        assert_eq!(got.travel_spend, 90.0);
    }
}
