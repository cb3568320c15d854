//! Linear assignment.
//!
//! [`min_cost_assignment`] solves the rectangular problem with the
//! shortest-augmenting-path Hungarian method and returns, among all optimal
//! assignments, the lexicographically smallest one by (row, column).
//! [`max_weight_matching`] builds on it for partial matchings where rows may
//! stay unassigned.

use crate::error::{Error, Result};

/// Optimal assignment rows -> columns for an `n x m` matrix with `n <= m`.
/// No tie-breaking.
fn hungarian(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> (f64, Vec<usize>) {
    let n = rows.len();
    let m = cols.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let c = |i: usize, j: usize| cost[rows[i - 1]][cols[j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row matched to column j (1-based, 0 = none)
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
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
    let mut assign = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[rows[i]][cols[j]]).sum();
    (total, assign)
}

/// Minimum-cost injective assignment of every row to a distinct column.
///
/// Among optimal assignments the lexicographically smallest column sequence
/// is returned. Costs within `1e-9` relative tolerance count as equal.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Shape("cost matrix rows differ in length".into()));
    }
    if n > m {
        return Err(Error::InvalidInput(format!("cannot assign {n} rows to {m} columns")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("cost matrix has non-finite entries".into()));
    }
    let scale = cost.iter().flatten().fold(0.0f64, |a, c| a.max(c.abs()));
    let tol = 1e-9 * (1.0 + scale * n as f64);
    let mut free_cols: Vec<usize> = (0..m).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let rest: Vec<usize> = (i..n).collect();
        let (best, _) = hungarian(cost, &rest, &free_cols);
        let tail: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (pos, &j) in free_cols.iter().enumerate() {
            let others: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            let (sub, _) = hungarian(cost, &tail, &others);
            if cost[i][j] + sub <= best + tol {
                chosen = Some(pos);
                break;
            }
        }
        let pos = chosen.expect("an optimal completion always exists");
        out.push(free_cols.remove(pos));
    }
    Ok(out)
}

/// Maximum-weight matching between rows and columns where only pairs with
/// positive weight may be matched and any row may stay unmatched.
pub fn max_weight_matching(weights: &[Vec<f64>]) -> Result<Vec<Option<usize>>> {
    let n = weights.len();
    let m = weights.first().map_or(0, Vec::len);
    if weights.iter().any(|r| r.len() != m) {
        return Err(Error::Shape("weight matrix rows differ in length".into()));
    }
    if weights.iter().flatten().any(|w| !w.is_finite()) {
        return Err(Error::InvalidInput("weight matrix has non-finite entries".into()));
    }
    let big = 2.0 * (n.max(1) as f64) * weights.iter().flatten().fold(0.0f64, |a, w| a.max(w.abs())) + 1.0;
    // one "unmatched" column per row at cost 0 after the real columns
    let cost: Vec<Vec<f64>> = weights
        .iter()
        .map(|row| {
            row.iter()
                .map(|&w| if w > 0.0 { -w } else { big })
                .chain(std::iter::repeat_n(0.0, n))
                .collect()
        })
        .collect();
    Ok(min_cost_assignment(&cost)?.into_iter().map(|j| (j < m).then_some(j)).collect())
}
