//! Ordering search: minimize the accumulated cost of consecutive
//! placements over an open path (no wrap-around edge).
//!
//! Small instances get exact subset dynamic programming with free start
//! and end. Larger ones use best-of-restarts nearest-neighbor
//! construction improved by segment re-insertion; the cost matrix is
//! asymmetric, so moves never reverse a segment.

use crate::compat::CostMatrix;
use crate::rng::{rng_from_seed, uniform_index};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Above this the 2^n * n state table stops being reasonable.
pub const DEFAULT_EXACT_LIMIT: usize = 20;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("order is not a permutation of 0..{0}")]
    InvalidPermutation(usize),
    #[error("instance of {n} shreds exceeds the exact-solver limit {limit}")]
    AboveExactLimit { n: usize, limit: usize },
    #[error("instance needs >= 2 shreds, got {0}")]
    TooSmall(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub order: Vec<usize>,
    pub objective: f64,
    pub solver: String,
}

/// Sum of the n-1 consecutive-pair costs along `order`.
pub fn objective(matrix: &CostMatrix, order: &[usize]) -> Result<f64, SolverError> {
    let n = matrix.n;
    if order.len() != n {
        return Err(SolverError::InvalidPermutation(n));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || seen[i] {
            return Err(SolverError::InvalidPermutation(n));
        }
        seen[i] = true;
    }
    Ok(order.windows(2).map(|w| matrix.at(w[0], w[1])).sum())
}

/// Globally optimal open path by dynamic programming over
/// (visited subset, last shred) states; free start and end.
pub fn solve_exact(matrix: &CostMatrix, limit: usize) -> Result<Solution, SolverError> {
    let n = matrix.n;
    if n < 2 {
        return Err(SolverError::TooSmall(n));
    }
    if n > limit {
        return Err(SolverError::AboveExactLimit { n, limit });
    }
    let full = 1usize << n;
    let mut dp = vec![f64::INFINITY; full * n];
    let mut parent = vec![u8::MAX; full * n];
    for i in 0..n {
        dp[(1 << i) * n + i] = 0.0;
    }
    for mask in 1..full {
        for last in 0..n {
            if mask & (1 << last) == 0 {
                continue;
            }
            let cur = dp[mask * n + last];
            if !cur.is_finite() {
                continue;
            }
            let rest = !mask & (full - 1);
            let mut bits = rest;
            while bits != 0 {
                let next = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let cand = cur + matrix.at(last, next);
                let idx = (mask | (1 << next)) * n + next;
                if cand < dp[idx] {
                    dp[idx] = cand;
                    parent[idx] = last as u8;
                }
            }
        }
    }
    let full_mask = full - 1;
    let (mut last, mut best) = (0usize, f64::INFINITY);
    for i in 0..n {
        if dp[full_mask * n + i] < best {
            best = dp[full_mask * n + i];
            last = i;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = full - 1;
    let mut cur = last;
    loop {
        order.push(cur);
        let p = parent[mask * n + cur];
        if p == u8::MAX {
            break;
        }
        mask &= !(1 << cur);
        cur = p as usize;
    }
    order.reverse();
    Ok(Solution { order, objective: best, solver: "exact-dp".into() })
}

fn nearest_neighbor(matrix: &CostMatrix, start: usize) -> Vec<usize> {
    let n = matrix.n;
    let mut used = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = start;
    used[cur] = true;
    order.push(cur);
    for _ in 1..n {
        let mut best = f64::INFINITY;
        let mut pick = usize::MAX;
        for j in 0..n {
            if !used[j] && matrix.at(cur, j) < best {
                best = matrix.at(cur, j);
                pick = j;
            }
        }
        used[pick] = true;
        order.push(pick);
        cur = pick;
    }
    order
}

/// Cost delta of moving the segment order[i..i+len] to sit before
/// position j of the remaining path (no reversal).
fn reinsertion_delta(matrix: &CostMatrix, order: &[usize], i: usize, len: usize, j: usize) -> f64 {
    let n = order.len();
    let seg_first = order[i];
    let seg_last = order[i + len - 1];
    let before = if i > 0 { Some(order[i - 1]) } else { None };
    let after = if i + len < n { Some(order[i + len]) } else { None };

    let mut removed = 0.0;
    if let Some(b) = before {
        removed += matrix.at(b, seg_first);
    }
    if let Some(a) = after {
        removed += matrix.at(seg_last, a);
    }
    let mut gained_bridge = 0.0;
    if let (Some(b), Some(a)) = (before, after) {
        gained_bridge = matrix.at(b, a);
    }

    // j indexes the path with the segment removed; the segment will sit
    // between rem[j-1] and rem[j] (path ends allowed).
    let rem_at = |k: usize| -> usize {
        if k < i { order[k] } else { order[k + len] }
    };
    let rem_len = n - len;
    let left = if j > 0 { Some(rem_at(j - 1)) } else { None };
    let right = if j < rem_len { Some(rem_at(j)) } else { None };
    let mut removed_slot = 0.0;
    if let (Some(l), Some(r)) = (left, right) {
        removed_slot = matrix.at(l, r);
    }
    let mut added = 0.0;
    if let Some(l) = left {
        added += matrix.at(l, seg_first);
    }
    if let Some(r) = right {
        added += matrix.at(seg_last, r);
    }
    added + gained_bridge - removed - removed_slot
}

fn apply_reinsertion(order: &mut Vec<usize>, i: usize, len: usize, j: usize) {
    let segment: Vec<usize> = order.drain(i..i + len).collect();
    order.splice(j..j, segment);
}

/// First-improvement re-insertion passes over segment lengths 1..=3
/// until no move improves. Objective is monotonically non-increasing.
fn local_search(matrix: &CostMatrix, order: &mut Vec<usize>) {
    let n = order.len();
    loop {
        let mut improved = false;
        for len in 1..=3usize.min(n - 1) {
            let mut i = 0;
            while i + len <= n {
                let rem_len = n - len;
                let mut best_j = usize::MAX;
                let mut best_delta = -1e-12;
                for j in 0..=rem_len {
                    // skip the no-op slot
                    if j == i {
                        continue;
                    }
                    let delta = reinsertion_delta(matrix, order, i, len, j);
                    if delta < best_delta {
                        best_delta = delta;
                        best_j = j;
                    }
                }
                if best_j != usize::MAX {
                    apply_reinsertion(order, i, len, best_j);
                    improved = true;
                }
                i += 1;
            }
        }
        if !improved {
            break;
        }
    }
}

/// Best of `restarts` seeded nearest-neighbor constructions, each
/// polished by re-insertion local search.
pub fn solve_heuristic(matrix: &CostMatrix, seed: u64, restarts: usize) -> Result<Solution, SolverError> {
    let n = matrix.n;
    if n < 2 {
        return Err(SolverError::TooSmall(n));
    }
    let mut rng = rng_from_seed(seed);
    let restarts = restarts.max(1);
    let mut best: Option<Solution> = None;
    for r in 0..restarts {
        // cycle deterministically through all starts before repeating
        let start = if r < n { (uniform_index(&mut rng, n) + r) % n } else { uniform_index(&mut rng, n) };
        let mut order = nearest_neighbor(matrix, start);
        local_search(matrix, &mut order);
        let obj = objective(matrix, &order)?;
        if best.as_ref().is_none_or(|b| obj < b.objective) {
            best = Some(Solution { order, objective: obj, solver: "nn+reinsertion".into() });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Picks the exact solver when the instance fits, otherwise the
/// heuristic.
pub fn solve_auto(matrix: &CostMatrix, exact_limit: usize, seed: u64, restarts: usize) -> Result<Solution, SolverError> {
    if matrix.n <= exact_limit {
        solve_exact(matrix, exact_limit)
    } else {
        solve_heuristic(matrix, seed, restarts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, uniform_unit};

    fn random_matrix(seed: u64, n: usize) -> CostMatrix {
        let mut rng = rng_from_seed(seed);
        let values: Vec<f64> = (0..n * n)
            .map(|idx| if idx % (n + 1) == 0 { f64::INFINITY } else { uniform_unit(&mut rng) })
            .collect();
        CostMatrix::from_values(n, values)
    }

    /// Chain 0 -> 1 -> ... -> n-1 costs zero, everything else costs 1.
    fn chain_matrix(n: usize) -> CostMatrix {
        let mut values = vec![1.0; n * n];
        for i in 0..n {
            values[i * n + i] = f64::INFINITY;
            if i + 1 < n {
                values[i * n + i + 1] = 0.0;
            }
        }
        CostMatrix::from_values(n, values)
    }

    fn brute_force(matrix: &CostMatrix) -> (Vec<usize>, f64) {
        fn permute(rest: &mut Vec<usize>, cur: &mut Vec<usize>, m: &CostMatrix, best: &mut (Vec<usize>, f64)) {
            if rest.is_empty() {
                let obj = objective(m, cur).unwrap();
                if obj < best.1 {
                    *best = (cur.clone(), obj);
                }
                return;
            }
            for k in 0..rest.len() {
                let v = rest.remove(k);
                cur.push(v);
                permute(rest, cur, m, best);
                cur.pop();
                rest.insert(k, v);
            }
        }
        let mut best = (Vec::new(), f64::INFINITY);
        permute(&mut (0..matrix.n).collect(), &mut Vec::new(), matrix, &mut best);
        best
    }

    #[test]
    fn objective_small_cases() {
        let m = random_matrix(1, 3);
        assert_eq!(objective(&m, &[2, 0, 1]).unwrap(), m.at(2, 0) + m.at(0, 1));
        let m2 = random_matrix(2, 2);
        assert_eq!(objective(&m2, &[0, 1]).unwrap(), m2.at(0, 1));
    }

    #[test]
    fn objective_rejects_non_permutations() {
        let m = random_matrix(3, 4);
        assert!(objective(&m, &[0, 1, 2]).is_err());
        assert!(objective(&m, &[0, 1, 2, 2]).is_err());
        assert!(objective(&m, &[0, 1, 2, 4]).is_err());
    }

    #[test]
    fn exact_equals_enumeration_n3() {
        for seed in 0..10 {
            let m = random_matrix(seed, 3);
            let sol = solve_exact(&m, DEFAULT_EXACT_LIMIT).unwrap();
            let (_, best) = brute_force(&m);
            assert_eq!(sol.objective, best);
            assert_eq!(objective(&m, &sol.order).unwrap(), sol.objective);
        }
    }

    #[test]
    fn exact_equals_enumeration_n7() {
        for seed in 0..5 {
            let m = random_matrix(100 + seed, 7);
            let sol = solve_exact(&m, DEFAULT_EXACT_LIMIT).unwrap();
            let (_, best) = brute_force(&m);
            assert_eq!(sol.objective, best, "seed {seed}");
        }
    }

    #[test]
    fn exact_recovers_zero_cost_chain() {
        let m = chain_matrix(8);
        let sol = solve_exact(&m, DEFAULT_EXACT_LIMIT).unwrap();
        assert_eq!(sol.order, (0..8).collect::<Vec<_>>());
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn exact_respects_limit() {
        let m = random_matrix(5, 6);
        assert!(matches!(
            solve_exact(&m, 5),
            Err(SolverError::AboveExactLimit { n: 6, limit: 5 })
        ));
    }

    #[test]
    fn heuristic_recovers_chain_and_is_deterministic() {
        let m = chain_matrix(12);
        let sol = solve_heuristic(&m, 9, 4).unwrap();
        assert_eq!(sol.order, (0..12).collect::<Vec<_>>());
        let again = solve_heuristic(&m, 9, 4).unwrap();
        assert_eq!(sol.order, again.order);
    }

    #[test]
    fn heuristic_never_beats_exact_and_often_matches() {
        let mut matches = 0;
        let trials = 40;
        for seed in 0..trials {
            let m = random_matrix(300 + seed, 7);
            let exact = solve_exact(&m, DEFAULT_EXACT_LIMIT).unwrap();
            let heur = solve_heuristic(&m, seed, 8).unwrap();
            assert!(heur.objective >= exact.objective - 1e-12);
            assert_eq!(objective(&m, &heur.order).unwrap(), heur.objective);
            if (heur.objective - exact.objective).abs() < 1e-12 {
                matches += 1;
            }
        }
        assert!(
            matches * 10 >= trials * 9,
            "heuristic matched exact on only {matches}/{trials} trials"
        );
    }

    #[test]
    fn local_search_never_increases_objective() {
        for seed in 0..10 {
            let m = random_matrix(500 + seed, 15);
            let mut order = nearest_neighbor(&m, (seed % 15) as usize);
            let before = objective(&m, &order).unwrap();
            local_search(&m, &mut order);
            let after = objective(&m, &order).unwrap();
            assert!(after <= before + 1e-12);
        }
    }
}
