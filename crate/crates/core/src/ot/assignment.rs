//! Linear assignment: Hungarian algorithm with potentials, plus the
//! lexicographic tie-break used for class matching.

use ndarray::Array2;

use super::cloud::CostMatrix;
use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a square matrix. Returns `σ` with row
/// `i` assigned to column `σ[i]`. `O(n³)`.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    debug_assert_eq!(n, cost.ncols());
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials over rows (u) and columns (v); p[j] is the row
    // matched to column j, way[j] the previous column on the augmenting path.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
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
    let mut sigma = vec![0; n];
    for j in 1..=n {
        sigma[p[j] - 1] = j - 1;
    }
    sigma
}

fn assignment_cost(cost: &Array2<f64>, sigma: &[usize]) -> f64 {
    sigma.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum()
}

fn tie_tolerance(cost: &Array2<f64>) -> f64 {
    let scale = cost.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-12 * (1.0 + scale * cost.nrows() as f64)
}

/// Exact minimizer of `Σ_k cost(k, σ(k))`; among optimal permutations the
/// lexicographically smallest one is returned.
pub fn optimal_assignment(cost: &CostMatrix) -> Result<Vec<usize>> {
    let (n, m) = cost.size();
    if n != m {
        return Err(Error::InvalidInput(format!("assignment needs a square matrix, got {n}x{m}")));
    }
    let c = &cost.0;
    let best = assignment_cost(c, &hungarian(c));
    let tol = tie_tolerance(c);
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut prefix = 0.0;
    for row in 0..n {
        let rest_rows: Vec<usize> = (row + 1..n).collect();
        let mut chosen = None;
        for col in 0..n {
            if fixed.contains(&col) {
                continue;
            }
            let rest_cols: Vec<usize> = (0..n).filter(|c| *c != col && !fixed.contains(c)).collect();
            let sub = Array2::from_shape_fn((rest_rows.len(), rest_cols.len()), |(a, b)| {
                c[[rest_rows[a], rest_cols[b]]]
            });
            let completion = assignment_cost(&sub, &hungarian(&sub));
            if prefix + c[[row, col]] + completion <= best + tol {
                chosen = Some(col);
                break;
            }
        }
        let col = chosen.expect("an optimal completion always exists");
        prefix += c[[row, col]];
        fixed.push(col);
    }
    Ok(fixed)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}
