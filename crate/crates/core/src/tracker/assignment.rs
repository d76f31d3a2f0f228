//! Thresholded minimum-cost bipartite assignment.
//!
//! An edge `(i, j)` is admissible when its cost is finite and strictly below
//! the threshold. Among all matchings over admissible edges the solver
//! minimizes `Σ (cost - threshold)`: a pair is taken whenever doing so is
//! cheaper than leaving both endpoints unmatched. With every cost far below
//! the threshold this is the classic full minimum-cost assignment.
//!
//! The problem is embedded in a square `(n + m)` instance with one dummy
//! column per row and one dummy row per column and solved with the
//! shortest-augmenting-path Hungarian method. Ties between optimal matchings
//! are broken toward the lexicographically smallest sorted match list.

use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// Matched `(row, col)` pairs sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    /// Sum of the matched costs.
    pub total_cost: f64,
}

/// Solves the thresholded assignment for `cost` (rows × cols, `+inf` allowed).
pub fn hungarian(cost: &Matrix, threshold: f64) -> Assignment {
    let (n, m) = (cost.rows(), cost.cols());
    let admissible = |i: usize, j: usize| {
        let c = cost[(i, j)];
        c.is_finite() && c < threshold
    };
    let mut row_to_col: Vec<Option<usize>> = vec![None; n];
    if n > 0 && m > 0 && (0..n).any(|i| (0..m).any(|j| admissible(i, j))) {
        let rows: Vec<usize> = (0..n).collect();
        let cols: Vec<usize> = (0..m).collect();
        let solution = solve_subproblem(cost, threshold, &rows, &cols);
        row_to_col = solution.assignment;
        lexicographic_polish(cost, threshold, &mut row_to_col, &solution.duals, solution.value);
    }

    let mut col_used = vec![false; m];
    let mut out = Assignment::default();
    for (i, c) in row_to_col.iter().enumerate() {
        match c {
            Some(j) => {
                col_used[*j] = true;
                out.total_cost += cost[(i, *j)];
                out.matches.push((i, *j));
            }
            None => out.unmatched_rows.push(i),
        }
    }
    out.unmatched_cols = (0..m).filter(|j| !col_used[*j]).collect();
    out
}

struct Solution {
    /// Per row of the subproblem, the matched original column.
    assignment: Vec<Option<usize>>,
    duals: Duals,
    value: f64,
}

/// Potentials of the square embedding, indexed by original row/column.
struct Duals {
    row: Vec<f64>,
    col: Vec<f64>,
}

/// Solves the instance restricted to `rows × cols`. The returned assignment
/// is indexed by original row (rows outside `rows` stay `None`).
fn solve_subproblem(cost: &Matrix, threshold: f64, rows: &[usize], cols: &[usize]) -> Solution {
    let (n, m) = (rows.len(), cols.len());
    let size = n + m;
    let inf = f64::INFINITY;
    // Augmented cost: real block, row dummies (top right), column dummies
    // (bottom left), dummy-dummy block (bottom right, free).
    let entry = |a: usize, b: usize| -> f64 {
        match (a < n, b < m) {
            (true, true) => {
                let c = cost[(rows[a], cols[b])];
                if c.is_finite() && c < threshold {
                    c - threshold
                } else {
                    inf
                }
            }
            (true, false) => {
                if b - m == a {
                    0.0
                } else {
                    inf
                }
            }
            (false, true) => {
                if a - n == b {
                    0.0
                } else {
                    inf
                }
            }
            (false, false) => 0.0,
        }
    };

    // Shortest augmenting path Hungarian, 1-based with a virtual column 0.
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut p = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let cur = entry(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(j1 != 0, "embedding always admits a finite perfect matching");
            for j in 0..=size {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![None; cost.rows()];
    let mut value = 0.0;
    for j in 1..=size {
        let i = p[j];
        if i == 0 {
            continue;
        }
        let (a, b) = (i - 1, j - 1);
        if a < n && b < m {
            assignment[rows[a]] = Some(cols[b]);
            value += entry(a, b);
        }
    }
    let mut duals = Duals {
        row: vec![0.0; cost.rows()],
        col: vec![0.0; cost.cols()],
    };
    for (a, &r) in rows.iter().enumerate() {
        duals.row[r] = u[a + 1];
    }
    for (b, &c) in cols.iter().enumerate() {
        duals.col[c] = v[b + 1];
    }
    Solution {
        assignment,
        duals,
        value,
    }
}

/// Rewrites an optimal assignment into the lexicographically smallest
/// optimal one. Only edges that are tight under the optimal duals can appear
/// in an optimal matching, so the re-solves are limited to genuine ties.
fn lexicographic_polish(
    cost: &Matrix,
    threshold: f64,
    row_to_col: &mut Vec<Option<usize>>,
    duals: &Duals,
    optimum: f64,
) {
    let (n, m) = (cost.rows(), cost.cols());
    let scale = cost
        .as_slice()
        .iter()
        .filter(|c| c.is_finite())
        .fold(threshold.abs().max(1.0), |s, c| s.max(c.abs()));
    // Rounding noise of sums of `c - threshold`, not a cost resolution.
    let tol = 64.0 * f64::EPSILON * scale * (n + m) as f64;

    let mut fixed_value = 0.0;
    let mut col_taken = vec![false; m];
    for r in 0..n {
        let current = row_to_col[r];
        let upper = current.unwrap_or(m);
        for j in 0..upper {
            let c = cost[(r, j)];
            if col_taken[j] || !(c.is_finite() && c < threshold) {
                continue;
            }
            if (c - threshold - duals.row[r] - duals.col[j]).abs() > tol {
                continue;
            }
            let rest_rows: Vec<usize> = (r + 1..n).collect();
            let rest_cols: Vec<usize> = (0..m).filter(|&k| !col_taken[k] && k != j).collect();
            let sub = solve_subproblem(cost, threshold, &rest_rows, &rest_cols);
            let total = fixed_value + (c - threshold) + sub.value;
            if (total - optimum).abs() <= tol {
                row_to_col[r] = Some(j);
                for k in r + 1..n {
                    row_to_col[k] = sub.assignment[k];
                }
                break;
            }
        }
        if let Some(j) = row_to_col[r] {
            col_taken[j] = true;
            fixed_value += cost[(r, j)] - threshold;
        }
    }
}
