//! Cyclical monotonicity of the class pairing: does matching source class
//! `k` to target class `k` minimize the summed conditional `W_2` distances
//! over all class permutations?

use ndarray::Array2;
use serde::Serialize;

use super::assignment::{hungarian, permutations};
use super::cloud::{CostMatrix, WeightedCloud};
use super::exact::exact_wasserstein;
use crate::error::{Error, Result};

/// Above this many classes the check switches from enumeration to
/// Hungarian-based search.
const BRUTE_FORCE_MAX_K: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub holds: bool,
    /// Best non-identity total minus identity total.
    pub margin: f64,
    /// Cheapest permutation other than the identity.
    pub worst_permutation: Vec<usize>,
    pub identity_cost: f64,
    #[serde(skip)]
    pub cost_matrix: CostMatrix,
}

/// `C_ij = W_2(source_i, target_j)`.
pub fn conditional_cost_matrix(source: &[WeightedCloud], target: &[WeightedCloud]) -> Result<CostMatrix> {
    let k = source.len();
    if k != target.len() {
        return Err(Error::InvalidInput(format!(
            "{k} source conditionals but {} target conditionals",
            target.len()
        )));
    }
    let mut c = Array2::zeros((k, target.len()));
    for (i, s) in source.iter().enumerate() {
        for (j, t) in target.iter().enumerate() {
            c[[i, j]] = exact_wasserstein(s, t, 2)?.distance;
        }
    }
    CostMatrix::new(c)
}

pub fn check_cyclical_monotonicity(
    source_conditionals: &[WeightedCloud],
    target_conditionals: &[WeightedCloud],
) -> Result<MonotonicityReport> {
    if source_conditionals.len() < 2 {
        return Err(Error::InvalidInput("monotonicity needs at least two classes".into()));
    }
    let cost = conditional_cost_matrix(source_conditionals, target_conditionals)?;
    Ok(monotonicity_from_costs(cost))
}

/// Monotonicity verdict for a precomputed conditional cost matrix.
pub fn monotonicity_from_costs(cost: CostMatrix) -> MonotonicityReport {
    let k = cost.size().0;
    let identity: Vec<usize> = (0..k).collect();
    let identity_cost = cost.permutation_cost(&identity);
    let (best_other, worst_permutation) = if k <= BRUTE_FORCE_MAX_K {
        permutations(k)
            .into_iter()
            .filter(|p| *p != identity)
            .map(|p| (cost.permutation_cost(&p), p))
            .fold((f64::INFINITY, Vec::new()), |best, cur| if cur.0 < best.0 { cur } else { best })
    } else {
        // The cheapest non-identity permutation moves some class k; forbid
        // each fixed point in turn.
        let big = cost.0.iter().fold(0.0f64, |m, v| m.max(v.abs())) * (k as f64 + 1.0) + 1.0;
        (0..k)
            .map(|f| {
                let mut c = cost.0.clone();
                c[[f, f]] = big;
                let p = hungarian(&c);
                (cost.permutation_cost(&p), p)
            })
            .fold((f64::INFINITY, Vec::new()), |best, cur| if cur.0 < best.0 { cur } else { best })
    };
    let margin = best_other - identity_cost;
    let scale = cost.0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    MonotonicityReport {
        holds: margin >= -1e-12 * (1.0 + scale),
        margin,
        worst_permutation,
        identity_cost,
        cost_matrix: cost,
    }
}
