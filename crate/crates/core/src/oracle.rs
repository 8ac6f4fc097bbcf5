//! Centralized reference solvers for the max-min assignment problem.
//!
//! Independent routes to the optimum are kept side by side on purpose:
//! exhaustive permutation search ([`maxmin_bruteforce`]), threshold
//! bisection over bipartite matchings ([`maxmin_bisection`]), and exact
//! search over the entry values ([`maxmin_exact`]). Tests compare them
//! against each other and against the decentralized protocol.

use crate::model::SquareMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("brute force supports at most {max} agents, got {got}")]
    TooLarge { got: usize, max: usize },
    #[error("need at least 2 arms per row, got {got}")]
    RowTooShort { got: usize },
    #[error("bisection epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
}

/// Max-min assignment: `value` is the best achievable worst-row entry,
/// `assignment[row]` the column given to `row` by an optimal permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMinSolution {
    pub value: f64,
    pub assignment: Vec<usize>,
}

impl MaxMinSolution {
    /// Worst entry this assignment actually attains on `m`.
    pub fn value_on(&self, m: &SquareMatrix) -> f64 {
        self.assignment
            .iter()
            .enumerate()
            .map(|(r, &c)| m.get(r, c))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Largest instance `maxmin_bruteforce` accepts; beyond this callers
/// should switch to `maxmin_bisection`.
pub const BRUTEFORCE_MAX: usize = 9;

/// Exhaustive max-min search over all `n!` permutations, `n <= 9`.
///
/// Ties resolve to the lexicographically smallest assignment vector, which
/// makes the result deterministic and comparison-friendly.
pub fn maxmin_bruteforce(m: &SquareMatrix) -> Result<MaxMinSolution, OracleError> {
    let n = m.n();
    if n > BRUTEFORCE_MAX {
        return Err(OracleError::TooLarge {
            got: n,
            max: BRUTEFORCE_MAX,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best_value = f64::NEG_INFINITY;
    let mut best: Vec<usize> = perm.clone();
    // Lexicographic enumeration; the first permutation reaching a value wins
    // ties, so `best` is the lexicographically smallest optimum.
    loop {
        let worst = perm
            .iter()
            .enumerate()
            .map(|(r, &c)| m.get(r, c))
            .fold(f64::INFINITY, f64::min);
        if worst > best_value {
            best_value = worst;
            best.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(MaxMinSolution {
        value: best_value,
        assignment: best,
    })
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Bipartite eligibility graph at threshold `tau`: row `r` is connected to
/// column `c` iff `m[r][c] >= tau` (inclusive).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGraph {
    n: usize,
    adj: Vec<bool>,
}

impl ThresholdGraph {
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn connected(&self, row: usize, col: usize) -> bool {
        self.adj[row * self.n + col]
    }

    pub fn from_eligibility(rows: &[Vec<bool>]) -> Self {
        let n = rows.len();
        debug_assert!(rows.iter().all(|r| r.len() == n));
        Self {
            n,
            adj: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count()
    }
}

pub fn threshold_graph(m: &SquareMatrix, tau: f64) -> ThresholdGraph {
    let n = m.n();
    let mut adj = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            adj.push(m.get(r, c) >= tau);
        }
    }
    ThresholdGraph { n, adj }
}

/// Maximum bipartite matching restricted to perfect ones: returns the
/// column assigned to each row if every row can be matched, `None`
/// otherwise. Plain augmenting-path search; `n` here never exceeds a few
/// dozen, so the `O(n^3)` worst case is irrelevant.
pub fn perfect_matching(g: &ThresholdGraph) -> Option<Vec<usize>> {
    let n = g.n();
    let mut col_owner: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    for row in 0..n {
        visited.iter_mut().for_each(|v| *v = false);
        if !augment(g, row, &mut visited, &mut col_owner) {
            return None;
        }
    }
    let mut assignment = vec![0usize; n];
    for (col, owner) in col_owner.iter().enumerate() {
        assignment[owner.expect("all rows matched")] = col;
    }
    Some(assignment)
}

fn augment(
    g: &ThresholdGraph,
    row: usize,
    visited: &mut [bool],
    col_owner: &mut [Option<usize>],
) -> bool {
    for col in 0..g.n() {
        if g.connected(row, col) && !visited[col] {
            visited[col] = true;
            if col_owner[col].is_none() || augment(g, col_owner[col].unwrap(), visited, col_owner) {
                col_owner[col] = Some(row);
                return true;
            }
        }
    }
    false
}

pub fn has_perfect_matching(g: &ThresholdGraph) -> bool {
    perfect_matching(g).is_some()
}

/// Max-min value via threshold search: doubling from `tau = 1` until the
/// threshold graph loses its perfect matching, then bisection until the
/// bracket is narrower than `epsilon`.
///
/// The returned `value` is the last feasible threshold, so it sits within
/// `epsilon` below the true optimum, and `assignment` is a perfect matching
/// witnessing it.
pub fn maxmin_bisection(m: &SquareMatrix, epsilon: f64) -> Result<MaxMinSolution, OracleError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(OracleError::BadEpsilon(epsilon));
    }
    let cap = 2.0 * m.max_entry();
    let mut lo = 0.0f64;
    let mut lo_witness: Option<Vec<usize>> = None;
    let mut tau = 1.0f64;
    let hi = loop {
        match perfect_matching(&threshold_graph(m, tau)) {
            Some(w) => {
                lo = tau;
                lo_witness = Some(w);
                tau *= 2.0;
                assert!(
                    tau <= cap.max(2.0),
                    "doubling escaped the support bound: tau={tau}, cap={cap}"
                );
            }
            None => break tau,
        }
    };
    let mut hi = hi;
    while hi - lo >= epsilon {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket no longer representable
        }
        match perfect_matching(&threshold_graph(m, mid)) {
            Some(w) => {
                lo = mid;
                lo_witness = Some(w);
            }
            None => hi = mid,
        }
    }
    let assignment = match lo_witness {
        Some(w) => w,
        // Never feasible at any tested threshold: every matrix is feasible
        // at 0, where the graph is complete.
        None => perfect_matching(&threshold_graph(m, 0.0)).expect("complete graph"),
    };
    Ok(MaxMinSolution {
        value: lo,
        assignment,
    })
}

/// Exact max-min value at any size. The optimum is attained by some
/// permutation, so it always equals a matrix entry; binary search over the
/// sorted distinct entries finds the largest feasible one in `O(log n)`
/// matching tests, with no floating-point tolerance anywhere.
pub fn maxmin_exact(m: &SquareMatrix) -> MaxMinSolution {
    let mut values: Vec<f64> = m.rows().flatten().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    // the smallest entry is always feasible: no edge is missing there
    let mut lo = 0usize;
    let mut witness = perfect_matching(&threshold_graph(m, values[0])).expect("complete graph");
    let mut hi = values.len();
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        match perfect_matching(&threshold_graph(m, values[mid])) {
            Some(w) => {
                lo = mid;
                witness = w;
            }
            None => hi = mid,
        }
    }
    MaxMinSolution {
        value: values[lo],
        assignment: witness,
    }
}

/// Smallest within-row gap: `min_r min_{i != j} |m[r][i] - m[r][j]|`.
/// Zero iff some row holds a duplicated value.
pub fn min_gap(m: &SquareMatrix) -> Result<f64, OracleError> {
    if m.n() < 2 {
        return Err(OracleError::RowTooShort { got: m.n() });
    }
    let mut gap = f64::INFINITY;
    for row in m.rows() {
        let mut sorted = row.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in sorted.windows(2) {
            let d = w[1] - w[0];
            if d < gap {
                gap = d;
            }
        }
    }
    Ok(gap)
}

/// Row-wise minimum gap of a single row, usable on estimate vectors.
pub fn row_gap(row: &[f64]) -> Result<f64, OracleError> {
    if row.len() < 2 {
        return Err(OracleError::RowTooShort { got: row.len() });
    }
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min))
}
