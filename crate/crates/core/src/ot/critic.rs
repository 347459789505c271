//! Dual Wasserstein-1 critic objective and its gradient penalty.

use ndarray::{Array1, Array2, Axis, s};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nncore::{DenseNet, GradientSet, LayerGrad};
use crate::rng;

#[derive(Debug, Clone)]
pub struct CriticLoss {
    /// `(1/n) Σ w_i v(x_i) − (1/m) Σ v(t_j)`.
    pub value: f64,
    pub critic_grads: GradientSet,
    /// Gradient with respect to each mapped-source row.
    pub mapped_grad: Array2<f64>,
}

/// Weighted dual objective between mapped source samples and target samples.
pub fn critic_wd_loss(
    v: &DenseNet,
    mapped_source: &Array2<f64>,
    class_weights: &[f64],
    target: &Array2<f64>,
) -> Result<CriticLoss> {
    let (n, m) = (mapped_source.nrows(), target.nrows());
    if n == 0 || m == 0 {
        return Err(Error::InvalidBatch("critic needs nonempty batches".into()));
    }
    if class_weights.len() != n {
        return Err(Error::Shape(format!("{n} mapped samples but {} weights", class_weights.len())));
    }
    if let Some(w) = class_weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::InvalidWeight(format!("critic sample weight {w} is negative")));
    }
    let src = v.forward(mapped_source)?;
    let tgt = v.forward(target)?;
    let w = Array1::from(class_weights.to_vec());
    let src_out = src.output().column(0).to_owned();
    let tgt_out = tgt.output().column(0).to_owned();
    let value = (&src_out * &w).sum() / n as f64 - tgt_out.sum() / m as f64;

    let g_src = (&w / n as f64).insert_axis(Axis(1));
    let g_tgt = Array2::from_elem((m, 1), -1.0 / m as f64);
    let bs = v.backward(&src, &g_src)?;
    let bt = v.backward(&tgt, &g_tgt)?;
    let mut critic_grads = bs.grads;
    critic_grads.add_assign(&bt.grads);
    Ok(CriticLoss {
        value,
        critic_grads,
        mapped_grad: bs.input_grad,
    })
}

#[derive(Debug, Clone)]
pub struct Penalty {
    /// Mean of `(‖∇v(ẑ)‖₂ − 1)²` over interpolated points.
    pub value: f64,
    pub critic_grads: GradientSet,
}

/// Gradient penalty on points interpolated between shuffled, index-paired
/// mapped-source and target rows.
pub fn gradient_penalty(v: &DenseNet, mapped_source: &Array2<f64>, target: &Array2<f64>, seed: u64) -> Result<Penalty> {
    if mapped_source.nrows() == 0 || target.nrows() == 0 {
        return Err(Error::InvalidBatch("gradient penalty needs nonempty batches".into()));
    }
    if mapped_source.ncols() != target.ncols() {
        return Err(Error::Shape("mapped source and target widths differ".into()));
    }
    let mut r = rng::stream(seed, "gp", 0);
    let ps = rng::permutation(mapped_source.nrows(), &mut r);
    let pt = rng::permutation(target.nrows(), &mut r);
    let len = ps.len().min(pt.len());
    let mut points = Array2::zeros((len, target.ncols()));
    for (row, (&i, &j)) in ps.iter().zip(&pt).take(len).enumerate() {
        let t: f64 = r.gen();
        let zi = mapped_source.row(i);
        let zj = target.row(j);
        points
            .row_mut(row)
            .assign(&(&zi * t + &zj * (1.0 - t)));
    }
    penalty_at(v, &points)
}

/// Penalty and its parameter gradient at the given points.
///
/// The input gradient of a piecewise-linear network is
/// `g = (…((m_L W_Lᵀ) ⊙ m_{L−1}) W_{L−1}ᵀ …) W_1ᵀ` with activation slopes
/// `m_l` held fixed, so its parameter derivative is linear in the weights and
/// biases contribute nothing.
pub fn penalty_at(v: &DenseNet, points: &Array2<f64>) -> Result<Penalty> {
    if v.output_dim() != 1 {
        return Err(Error::Shape("gradient penalty needs a scalar critic".into()));
    }
    let acts = v.forward(points)?;
    let layers = v.layers();
    let n_layers = layers.len();
    let n = points.nrows();
    let slopes = layers
        .iter()
        .zip(&acts.pre)
        .map(|(l, p)| {
            l.activation
                .slope(p)
                .ok_or_else(|| Error::InvalidSpec("gradient penalty needs piecewise-linear activations".into()))
        })
        .collect::<Result<Vec<_>>>()?;

    // deltas[l]: gradient on layer l's pre-activation; inputs[l]: gradient on
    // layer l's input.
    let mut deltas: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n_layers];
    let mut inputs: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n_layers];
    let mut d = slopes[n_layers - 1].clone();
    for l in (0..n_layers).rev() {
        let a = d.dot(&layers[l].weight.t());
        deltas[l] = d.clone();
        if l > 0 {
            d = &a * &slopes[l - 1];
        }
        inputs[l] = a;
    }
    let g = &inputs[0];
    let norms = g.map_axis(Axis(1), |row| row.dot(&row).sqrt());
    let value = norms.mapv(|x| (x - 1.0).powi(2)).sum() / n as f64;

    let mut a_bar = Array2::zeros(g.raw_dim());
    for (i, &nrm) in norms.iter().enumerate() {
        if nrm > 0.0 {
            let coef = 2.0 * (nrm - 1.0) / (n as f64 * nrm);
            a_bar.slice_mut(s![i, ..]).assign(&(&g.row(i) * coef));
        }
    }
    let mut grads: Vec<LayerGrad> = layers
        .iter()
        .map(|l| LayerGrad {
            weight: Array2::zeros(l.weight.raw_dim()),
            bias: Array1::zeros(l.bias.raw_dim()),
        })
        .collect();
    for l in 0..n_layers {
        grads[l].weight = crate::nncore::standard(a_bar.t().dot(&deltas[l]));
        if l + 1 < n_layers {
            let d_bar = a_bar.dot(&layers[l].weight);
            a_bar = &d_bar * &slopes[l];
        }
    }
    Ok(Penalty {
        value,
        critic_grads: GradientSet { layers: grads },
    })
}
