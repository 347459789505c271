//! Class-averaged transport cost of the residual map.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{ResidualActivations, ResidualGradients, ResidualMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    /// Squared end-to-end displacement `‖φ(z) − z‖²`.
    Static,
    /// Sum over blocks of squared block residuals `Σ_b ‖h_b(z_b)‖²`.
    Dynamic,
}

/// Cost value plus the gradients to feed into [`ResidualMap::backward`].
#[derive(Debug, Clone)]
pub struct CostGradients {
    pub value: f64,
    pub out_grad: Array2<f64>,
    pub residual_grads: Option<Vec<Array2<f64>>>,
}

/// Transport cost evaluated on an existing forward pass of a labeled batch.
/// Classes absent from the batch contribute nothing.
pub fn transport_cost_from_acts(
    acts: &ResidualActivations,
    labels: &[usize],
    num_classes: usize,
    mode: CostMode,
) -> Result<CostGradients> {
    let n = acts.output.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} samples but {} labels", labels.len())));
    }
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        if y >= num_classes {
            return Err(Error::InvalidLabel {
                label: y as i64,
                classes: num_classes,
            });
        }
        counts[y] += 1;
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::InvalidBatch("every class group is empty".into()));
    }
    let inv: Vec<f64> = labels.iter().map(|&y| 1.0 / counts[y] as f64).collect();
    let inv_col = ndarray::Array1::from(inv).insert_axis(Axis(1));
    match mode {
        CostMode::Static => {
            let disp = &acts.output - &acts.block_inputs[0];
            let sq = disp.map_axis(Axis(1), |r| r.dot(&r));
            let value = sq.iter().zip(inv_col.iter()).map(|(s, w)| s * w).sum();
            Ok(CostGradients {
                value,
                out_grad: disp * &inv_col * 2.0,
                residual_grads: None,
            })
        }
        CostMode::Dynamic => {
            let mut value = 0.0;
            let mut grads = Vec::with_capacity(acts.block_acts.len());
            for b in 0..acts.block_acts.len() {
                let h = acts.residual(b);
                let sq = h.map_axis(Axis(1), |r| r.dot(&r));
                value += sq.iter().zip(inv_col.iter()).map(|(s, w)| s * w).sum::<f64>();
                grads.push(h * &inv_col * 2.0);
            }
            Ok(CostGradients {
                value,
                out_grad: Array2::zeros(acts.output.raw_dim()),
                residual_grads: Some(grads),
            })
        }
    }
}

/// Transport cost of `phi` on latents grouped by class (one matrix per
/// class, possibly with zero rows), with gradients for `phi`.
pub fn transport_cost(phi: &ResidualMap, groups: &[Array2<f64>], mode: CostMode) -> Result<(f64, ResidualGradients)> {
    let d = phi.dim();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, g) in groups.iter().enumerate() {
        if g.nrows() > 0 && g.ncols() != d {
            return Err(Error::Shape(format!("class {k} latents have width {}, map expects {d}", g.ncols())));
        }
        for r in g.rows() {
            rows.push(r.to_owned());
            labels.push(k);
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidBatch("every class group is empty".into()));
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let z = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let acts = phi.forward(&z)?;
    let cost = transport_cost_from_acts(&acts, &labels, groups.len(), mode)?;
    let (grads, _) = phi.backward(&acts, &cost.out_grad, cost.residual_grads.as_deref())?;
    Ok((cost.value, grads))
}
