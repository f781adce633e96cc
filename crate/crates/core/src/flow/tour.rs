//! Shortest open Manhattan tours from a start point through a set of stops.

use itertools::Itertools;

use super::FlowError;
use crate::model::Point;

/// Largest stop count accepted by [`shortest_tour`].
pub const MAX_TOUR_POINTS: usize = 5;
/// Upper bound on the number of subsets [`SubsetTours`] will tabulate.
pub const MAX_SUBSETS: usize = 1 << 21;

pub fn manhattan_km(a: Point, b: Point) -> f64 {
    (a.x - b.x).abs() + (a.y - b.y).abs()
}

/// Exhaustive search over visiting orders. Ties keep the lexicographically
/// first permutation.
pub fn shortest_tour(start: Point, points: &[Point]) -> Result<(Vec<usize>, f64), FlowError> {
    if points.is_empty() || points.len() > MAX_TOUR_POINTS {
        return Err(FlowError::TourSize(points.len()));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for order in (0..points.len()).permutations(points.len()) {
        let mut km = 0.0;
        let mut at = start;
        for &i in &order {
            km += manhattan_km(at, points[i]);
            at = points[i];
        }
        if best.as_ref().is_none_or(|(_, b)| km < *b) {
            best = Some((order, km));
        }
    }
    Ok(best.expect("at least one permutation"))
}

fn binomials(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0usize; k + 1]; n + 1];
    for i in 0..=n {
        c[i][0] = 1;
        for j in 1..=k.min(i) {
            c[i][j] = c[i - 1][j - 1].saturating_add(if j < i { c[i - 1][j] } else { 0 });
        }
    }
    c
}

/// Next integer with the same popcount (Gosper); yields masks in colex order.
fn next_combination(mask: u64) -> u64 {
    let c = mask & mask.wrapping_neg();
    let r = mask + c;
    (((r ^ mask) >> 2) / c) | r
}

/// Shortest open tour for every subset of up to `max_size` stops, by dynamic
/// programming over (subset, last stop).
///
/// Subsets are bit masks over the indices of `points`.
#[derive(Debug, Clone)]
pub struct SubsetTours {
    n: usize,
    max_size: usize,
    binom: Vec<Vec<usize>>,
    /// First mask index of each subset size.
    mask_offset: Vec<usize>,
    /// First dp slot of each subset size.
    slot_offset: Vec<usize>,
    /// dp[(mask, last)]: shortest path from start through mask ending at last.
    dp: Vec<f64>,
    km: Vec<f64>,
    start_dist: Vec<f64>,
    dist: Vec<f64>,
}

impl SubsetTours {
    pub fn build(start: Point, points: &[Point], max_size: usize) -> Result<Self, FlowError> {
        let n = points.len();
        if n > 63 {
            return Err(FlowError::TooManySubsets(usize::MAX));
        }
        let max_size = max_size.min(n);
        let binom = binomials(n, max_size);
        let mut mask_offset = vec![0usize; max_size + 2];
        let mut slot_offset = vec![0usize; max_size + 2];
        for m in 1..=max_size {
            mask_offset[m + 1] = mask_offset[m].saturating_add(binom[n][m]);
            slot_offset[m + 1] =
                slot_offset[m].saturating_add(binom[n][m].saturating_mul(m));
        }
        let total = mask_offset[max_size + 1];
        if total > MAX_SUBSETS {
            return Err(FlowError::TooManySubsets(total));
        }

        let start_dist: Vec<f64> = points.iter().map(|&p| manhattan_km(start, p)).collect();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = manhattan_km(points[i], points[j]);
            }
        }

        let dp = vec![f64::INFINITY; slot_offset[max_size + 1]];
        let mut table = SubsetTours {
            n,
            max_size,
            binom,
            mask_offset,
            slot_offset,
            dp,
            km: vec![f64::INFINITY; total],
            start_dist,
            dist,
        };
        table.fill();
        Ok(table)
    }

    fn fill(&mut self) {
        let n = self.n;
        for m in 1..=self.max_size {
            let mut mask: u64 = (1u64 << m) - 1;
            let mut rank = 0usize;
            let limit = 1u64 << n;
            while mask < limit {
                let base = self.slot_offset[m] + rank * m;
                let mut best = f64::INFINITY;
                for (pos, last) in bits(mask).enumerate() {
                    let v = if m == 1 {
                        self.start_dist[last]
                    } else {
                        let prev = mask & !(1u64 << last);
                        let pbase = self.slot_base(prev);
                        let mut b = f64::INFINITY;
                        for (ppos, k) in bits(prev).enumerate() {
                            let cand = self.dp[pbase + ppos] + self.dist[k * n + last];
                            if cand < b {
                                b = cand;
                            }
                        }
                        b
                    };
                    self.dp[base + pos] = v;
                    if v < best {
                        best = v;
                    }
                }
                self.km[self.mask_offset[m] + rank] = best;
                rank += 1;
                if m == n {
                    break;
                }
                mask = next_combination(mask);
            }
        }
    }

    fn colex_rank(&self, mask: u64) -> usize {
        bits(mask)
            .enumerate()
            .map(|(i, b)| self.binom[b][i + 1])
            .sum()
    }

    fn slot_base(&self, mask: u64) -> usize {
        let m = mask.count_ones() as usize;
        self.slot_offset[m] + self.colex_rank(mask) * m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Tour length for a non-empty subset of at most `max_size` stops.
    pub fn km(&self, mask: u64) -> f64 {
        let m = mask.count_ones() as usize;
        debug_assert!(m >= 1 && m <= self.max_size);
        self.km[self.mask_offset[m] + self.colex_rank(mask)]
    }

    /// Tour length, or `None` for masks outside the table.
    pub fn try_km(&self, mask: u64) -> Option<f64> {
        let m = mask.count_ones() as usize;
        if m == 0 || m > self.max_size || (self.n < 64 && mask >> self.n != 0) {
            return None;
        }
        Some(self.km(mask))
    }

    /// An optimal visiting order for the subset.
    pub fn order(&self, mask: u64) -> Vec<usize> {
        let mut out = Vec::with_capacity(mask.count_ones() as usize);
        let mut cur = mask;
        // pick the cheapest last stop, then walk predecessors backwards
        let mut last = {
            let base = self.slot_base(cur);
            let mut best = (f64::INFINITY, 0usize);
            for (pos, j) in bits(cur).enumerate() {
                if self.dp[base + pos] < best.0 {
                    best = (self.dp[base + pos], j);
                }
            }
            best.1
        };
        loop {
            out.push(last);
            let base = self.slot_base(cur);
            let pos = bits(cur).position(|b| b == last).expect("last in mask");
            let here = self.dp[base + pos];
            let prev = cur & !(1u64 << last);
            if prev == 0 {
                break;
            }
            let pbase = self.slot_base(prev);
            let mut pick = None;
            for (ppos, k) in bits(prev).enumerate() {
                let cand = self.dp[pbase + ppos] + self.dist[k * self.n + last];
                if cand == here {
                    pick = Some(k);
                    break;
                }
            }
            last = pick.expect("predecessor reproduces dp value");
            cur = prev;
        }
        out.reverse();
        out
    }

    /// Every tabulated subset, by size then colex order.
    pub fn masks(&self) -> impl Iterator<Item = u64> + '_ {
        (1..=self.max_size).flat_map(move |m| {
            let n = self.n;
            let mut mask: u64 = (1u64 << m) - 1;
            let mut done = false;
            std::iter::from_fn(move || {
                if done || mask >= (1u64 << n) {
                    return None;
                }
                let out = mask;
                if m == n {
                    done = true;
                } else {
                    mask = next_combination(mask);
                }
                Some(out)
            })
        })
    }
}

/// Indices of set bits, ascending.
pub(crate) fn bits(mut mask: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if mask == 0 {
            None
        } else {
            let b = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            Some(b)
        }
    })
}
