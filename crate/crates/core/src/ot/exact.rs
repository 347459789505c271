//! Exact discrete optimal transport.
//!
//! Uniform clouds of equal size reduce to an assignment problem and go
//! through the Hungarian algorithm. Everything else is solved as a dense
//! transportation LP with the primal network simplex: the basis is a
//! spanning tree on the bipartite graph of supply rows and demand columns,
//! potentials come from a traversal of that tree, and entering cells are
//! priced block by block.

use std::collections::VecDeque;

use ndarray::Array2;

use super::assignment::hungarian;
use super::cloud::{Coupling, WeightedCloud, ground_cost};
use crate::error::{Error, Result};

/// Solution of one transport problem.
#[derive(Debug, Clone)]
pub struct Transport {
    /// `W_p = (min Σ π_ij c_ij)^(1/p)`.
    pub distance: f64,
    /// The optimal primal cost `Σ π_ij c_ij`.
    pub cost: f64,
    pub coupling: Coupling,
}

/// `W_p` between two weighted clouds under the ground cost `‖x − y‖₂^p`,
/// together with an optimal coupling.
pub fn exact_wasserstein(a: &WeightedCloud, b: &WeightedCloud, p: u32) -> Result<Transport> {
    if p != 1 && p != 2 {
        return Err(Error::InvalidInput(format!("p must be 1 or 2, got {p}")));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "clouds live in dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let cost = ground_cost(a.points(), b.points(), p);
    let (total, plan) = if a.len() == b.len() && a.is_uniform() && b.is_uniform() {
        let n = a.len();
        let sigma = hungarian(&cost);
        let mut plan = Array2::zeros((n, n));
        let mut total = 0.0;
        for (i, &j) in sigma.iter().enumerate() {
            plan[[i, j]] = 1.0 / n as f64;
            total += cost[[i, j]];
        }
        (total / n as f64, plan)
    } else {
        transport_simplex(a.weights(), b.weights(), &cost)?
    };
    let total = total.max(0.0);
    Ok(Transport {
        distance: total.powf(1.0 / p as f64),
        cost: total,
        coupling: Coupling { plan },
    })
}

struct Tree {
    parent: Vec<usize>,
    parent_edge: Vec<usize>,
    depth: Vec<usize>,
}

/// Solves `min ⟨π, cost⟩` over couplings of `supply` and `demand` (both
/// summing to one). Returns the optimal value and plan.
pub fn transport_simplex(supply: &[f64], demand: &[f64], cost: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let (n, m) = (supply.len(), demand.len());
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("empty marginal".into()));
    }
    if cost.dim() != (n, m) {
        return Err(Error::Shape(format!("cost is {:?}, marginals are {n}x{m}", cost.dim())));
    }
    let sa: f64 = supply.iter().sum();
    let sb: f64 = demand.iter().sum();
    if (sa - sb).abs() > 1e-9 * sa.max(sb).max(1.0) {
        return Err(Error::InvalidWeight(format!("marginals have masses {sa} and {sb}")));
    }
    let mut a: Vec<f64> = supply.iter().map(|x| x / sa).collect();
    let mut b: Vec<f64> = demand.iter().map(|x| x / sb).collect();

    // Northwest corner: advancing exactly one index per step yields n + m - 1
    // cells forming a spanning tree, even when flows are degenerate.
    let mut cells: Vec<(usize, usize)> = Vec::with_capacity(n + m - 1);
    let mut flow: Vec<f64> = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let f = a[i].min(b[j]);
        cells.push((i, j));
        flow.push(f);
        a[i] -= f;
        b[j] -= f;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if j == m - 1 || (i < n - 1 && a[i] <= b[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    debug_assert_eq!(cells.len(), n + m - 1);

    let nodes = n + m;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (e, &(r, c)) in cells.iter().enumerate() {
        adj[r].push(e);
        adj[n + c].push(e);
    }

    let scale = cost.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let eps = 1e-12 * (1.0 + scale);
    let block = ((n * m) as f64).sqrt().ceil().max(32.0) as usize;
    let total_cells = n * m;
    let mut cursor = 0usize;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut tree = Tree {
        parent: vec![usize::MAX; nodes],
        parent_edge: vec![usize::MAX; nodes],
        depth: vec![0; nodes],
    };
    let max_pivots = 50 * (n + m) * (n + m).max(100);

    for _pivot in 0..max_pivots {
        build_tree(n, &cells, &adj, cost, &mut u, &mut v, &mut tree);

        // Block pricing: best reduced cost within the first block that has
        // a negative one.
        let mut entering = None;
        let mut best = -eps;
        let mut scanned = 0;
        while scanned < total_cells {
            let stop = (scanned + block).min(total_cells);
            while scanned < stop {
                let idx = cursor;
                cursor = if cursor + 1 == total_cells { 0 } else { cursor + 1 };
                scanned += 1;
                let (r, c) = (idx / m, idx % m);
                let rc = cost[[r, c]] - u[r] - v[c];
                if rc < best {
                    best = rc;
                    entering = Some((r, c));
                }
            }
            if entering.is_some() {
                break;
            }
        }
        let Some((er, ec)) = entering else {
            let mut plan = Array2::zeros((n, m));
            let mut total = 0.0;
            for (&(r, c), &f) in cells.iter().zip(&flow) {
                let f = f.max(0.0);
                plan[[r, c]] += f;
                total += f * cost[[r, c]];
            }
            return Ok((total * sa, plan * sa));
        };

        // Cycle: entering edge (+), then the tree path from column `ec`
        // back to row `er`, alternating signs starting with (−).
        let (mut x, mut y) = (n + ec, er);
        let mut from_col: Vec<usize> = Vec::new();
        let mut from_row: Vec<usize> = Vec::new();
        while x != y {
            if tree.depth[x] >= tree.depth[y] {
                from_col.push(tree.parent_edge[x]);
                x = tree.parent[x];
            } else {
                from_row.push(tree.parent_edge[y]);
                y = tree.parent[y];
            }
        }
        let path: Vec<usize> = from_col.into_iter().chain(from_row.into_iter().rev()).collect();
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 && flow[e] < theta {
                theta = flow[e];
                leaving = e;
            }
        }
        let theta = theta.max(0.0);
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 {
                flow[e] -= theta;
            } else {
                flow[e] += theta;
            }
        }
        let (lr, lc) = cells[leaving];
        adj[lr].retain(|&e| e != leaving);
        adj[n + lc].retain(|&e| e != leaving);
        cells[leaving] = (er, ec);
        flow[leaving] = theta;
        adj[er].push(leaving);
        adj[n + ec].push(leaving);
    }
    Err(Error::InvalidInput("transport simplex did not terminate".into()))
}

/// Roots the basis tree at row 0 and computes dual potentials with
/// `u_r + v_c = cost(r, c)` on every basic cell.
fn build_tree(
    n: usize,
    cells: &[(usize, usize)],
    adj: &[Vec<usize>],
    cost: &Array2<f64>,
    u: &mut [f64],
    v: &mut [f64],
    tree: &mut Tree,
) {
    let nodes = adj.len();
    let mut seen = vec![false; nodes];
    let mut queue = VecDeque::with_capacity(nodes);
    seen[0] = true;
    u[0] = 0.0;
    tree.parent[0] = usize::MAX;
    tree.depth[0] = 0;
    queue.push_back(0);
    while let Some(node) = queue.pop_front() {
        for &e in &adj[node] {
            let (r, c) = cells[e];
            let other = if node < n { n + c } else { r };
            if seen[other] {
                continue;
            }
            seen[other] = true;
            if other >= n {
                v[c] = cost[[r, c]] - u[r];
            } else {
                u[r] = cost[[r, c]] - v[c];
            }
            tree.parent[other] = node;
            tree.parent_edge[other] = e;
            tree.depth[other] = tree.depth[node] + 1;
            queue.push_back(other);
        }
    }
    debug_assert!(seen.iter().all(|&s| s), "basis must span all nodes");
}
