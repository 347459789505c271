//! Classification and information-maximization losses with their gradients.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::labelshift::ProportionVector;
use crate::nncore::{DenseNet, GradientSet, ResidualGradients, ResidualMap, softmax_cross_entropy, softmax_rows};

/// Per-sample weights `p_N[y] / p_S[y]`.
pub fn class_weights(labels: &[usize], p_n: &ProportionVector, p_s: &ProportionVector) -> Result<Vec<f64>> {
    if p_n.len() != p_s.len() {
        return Err(Error::InvalidProportions("p_N and p_S differ in length".into()));
    }
    if let Some(k) = p_s.values().iter().position(|&v| v <= 0.0) {
        return Err(Error::InvalidProportions(format!("source proportion of class {k} is zero")));
    }
    labels
        .iter()
        .map(|&y| {
            if y >= p_s.len() {
                return Err(Error::InvalidLabel {
                    label: y as i64,
                    classes: p_s.len(),
                });
            }
            Ok(p_n.values()[y] / p_s.values()[y])
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ClsLoss {
    pub value: f64,
    pub classifier_grads: GradientSet,
    pub phi_grads: ResidualGradients,
    /// Gradient on the encoder output `z = g(x)`.
    pub latent_grad: Array2<f64>,
}

/// `(1/n) Σ w_i CE(f_N(φ(z_i)), y_i)` on source latents `z`.
pub fn classification_loss_n(
    f_n: &DenseNet,
    phi: &ResidualMap,
    latents: &Array2<f64>,
    labels: &[usize],
    weights: &[f64],
) -> Result<ClsLoss> {
    let phi_acts = phi.forward(latents)?;
    let f_acts = f_n.forward(&phi_acts.output)?;
    let (value, logit_grad) = softmax_cross_entropy(f_acts.output(), labels, weights)?;
    let bp = f_n.backward(&f_acts, &logit_grad)?;
    let (phi_grads, latent_grad) = phi.backward(&phi_acts, &bp.input_grad, None)?;
    Ok(ClsLoss {
        value,
        classifier_grads: bp.grads,
        phi_grads,
        latent_grad,
    })
}

/// Unweighted cross-entropy of a classifier on latents: value, classifier
/// gradients and latent gradient.
pub fn source_loss(f: &DenseNet, latents: &Array2<f64>, labels: &[usize]) -> Result<(f64, GradientSet, Array2<f64>)> {
    let acts = f.forward(latents)?;
    let (value, g) = softmax_cross_entropy(acts.output(), labels, &vec![1.0; labels.len()])?;
    let bp = f.backward(&acts, &g)?;
    Ok((value, bp.grads, bp.input_grad))
}

#[derive(Debug, Clone)]
pub struct ImLoss {
    /// Mean prediction entropy `−Σ_k δ_k log δ_k`.
    pub entropy: f64,
    /// `Σ_k p̄_k log p̄_k` of the batch-mean prediction.
    pub diversity: f64,
    /// Gradients of `entropy + diversity`.
    pub classifier_grads: GradientSet,
    pub latent_grad: Array2<f64>,
}

fn xlogx_log(p: f64) -> f64 {
    if p > 0.0 { p.ln() } else { 0.0 }
}

/// Entropy and diversity terms of `f` on target latents.
pub fn im_losses(f: &DenseNet, latents: &Array2<f64>) -> Result<ImLoss> {
    let n = latents.nrows();
    if n == 0 {
        return Err(Error::InvalidBatch("information maximization needs a nonempty batch".into()));
    }
    let acts = f.forward(latents)?;
    let p = softmax_rows(acts.output());
    let logp = p.mapv(xlogx_log);
    let h = (&p * &logp).sum_axis(Axis(1)).mapv(|v| -v);
    let entropy = h.sum() / n as f64;
    let pbar = p.mean_axis(Axis(0)).expect("nonempty batch");
    let logpbar = pbar.mapv(xlogx_log);
    let diversity = (&pbar * &logpbar).sum();

    // d entropy / d logit_ij = (1/n) p_ij (−log p_ij − H_i)
    // d diversity / d logit_ij = (1/n) p_ij (log p̄_j − Σ_k p_ik log p̄_k)
    let hcol = h.insert_axis(Axis(1));
    let mixed = p.dot(&logpbar).insert_axis(Axis(1));
    let grad = (&p * &(-&logp - &hcol + &logpbar - &mixed)) / n as f64;
    let bp = f.backward(&acts, &grad)?;
    Ok(ImLoss {
        entropy,
        diversity,
        classifier_grads: bp.grads,
        latent_grad: bp.input_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradcheck::{FD_STEP, check};
    use crate::nncore::{Activation, ArchTag, InitScheme, Layer, NetSpec, init_params};
    use ndarray::{Array1, array};

    fn p(v: &[f64]) -> ProportionVector {
        ProportionVector::new(v.to_vec()).unwrap()
    }

    fn logit_passthrough(k: usize) -> DenseNet {
        DenseNet::from_layers(
            ArchTag::Classifier,
            vec![Layer {
                weight: Array2::eye(k),
                bias: Array1::zeros(k),
                activation: Activation::Identity,
            }],
        )
        .unwrap()
    }

    fn identity_phi(d: usize) -> ResidualMap {
        ResidualMap::identity(d, 3, 2, InitScheme::Normal, 0.1, 0).unwrap()
    }

    #[test]
    fn weights_follow_ratio() {
        let w = class_weights(&[0, 1, 1], &p(&[0.6, 0.4]), &p(&[0.5, 0.5])).unwrap();
        assert_eq!(w, vec![1.2, 0.8, 0.8]);
        assert!(matches!(
            class_weights(&[0], &p(&[0.5, 0.5]), &p(&[1.0, 0.0])),
            Err(Error::InvalidProportions(_))
        ));
    }

    #[test]
    fn hand_weighted_cross_entropy() {
        // Logits (ln 0.8, ln 0.2) label 0 weight 1.2; (ln 0.4, ln 0.6) label 1 weight 0.8.
        let z = array![[0.8f64.ln(), 0.2f64.ln()], [0.4f64.ln(), 0.6f64.ln()]];
        let l = classification_loss_n(&logit_passthrough(2), &identity_phi(2), &z, &[0, 1], &[1.2, 0.8]).unwrap();
        let want = (1.2 * -(0.8f64.ln()) + 0.8 * -(0.6f64.ln())) / 2.0;
        assert!((l.value - want).abs() < 1e-12);
    }

    #[test]
    fn equal_proportions_is_plain_cross_entropy() {
        let z = array![[2.0, -1.0], [0.5, 0.3], [-1.0, 1.0]];
        let y = [0, 1, 1];
        let w = class_weights(&y, &p(&[0.3, 0.7]), &p(&[0.3, 0.7])).unwrap();
        let f = logit_passthrough(2);
        let a = classification_loss_n(&f, &identity_phi(2), &z, &y, &w).unwrap().value;
        let b = source_loss(&f, &z, &y).unwrap().0;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn saturated_classifier_has_tiny_loss() {
        let z = array![[40.0, 0.0], [0.0, 40.0]];
        let l = classification_loss_n(&logit_passthrough(2), &identity_phi(2), &z, &[0, 1], &[3.0, 0.1]).unwrap();
        assert!(l.value < 1e-3);
    }

    #[test]
    fn im_extremes() {
        let f = logit_passthrough(3);
        let onehot = array![[60.0, 0.0, 0.0], [0.0, 60.0, 0.0], [0.0, 0.0, 60.0]];
        let l = im_losses(&f, &onehot).unwrap();
        assert!(l.entropy < 1e-20);
        let uniform = Array2::zeros((4, 3));
        let l = im_losses(&f, &uniform).unwrap();
        assert!((l.entropy - 3f64.ln()).abs() < 1e-15);
        assert!((l.diversity + 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn im_hand_values() {
        let z = array![[0.9f64.ln(), 0.1f64.ln()], [0.5f64.ln(), 0.5f64.ln()]];
        let l = im_losses(&logit_passthrough(2), &z).unwrap();
        let h1 = -(0.9 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        let h2 = 2f64.ln();
        assert!((l.entropy - (h1 + h2) / 2.0).abs() < 1e-12);
        // p̄ = (0.7, 0.3)
        assert!((l.diversity - (0.7 * 0.7f64.ln() + 0.3 * 0.3f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..4 {
            let f = init_params(&NetSpec::new(ArchTag::Classifier, 2, &[6], 3), InitScheme::Normal, 0.9, seed).unwrap();
            let phi = ResidualMap::init(2, 4, 3, InitScheme::Orthogonal, 0.5, seed + 10).unwrap();
            let z = Array2::from_shape_fn((7, 2), |(i, j)| ((i * 3 + j * 5 + seed as usize) % 7) as f64 * 0.4 - 1.2);
            let y = [0, 1, 2, 0, 1, 2, 2];
            let w = [1.2, 0.8, 0.5, 1.2, 0.8, 0.5, 0.5];
            let l = classification_loss_n(&f, &phi, &z, &y, &w).unwrap();
            let value = |ff: &DenseNet, pp: &ResidualMap, zz: &Array2<f64>| {
                classification_loss_n(ff, pp, zz, &y, &w).unwrap().value
            };
            assert!(check(&f, &l.classifier_grads, FD_STEP, |ff| value(ff, &phi, &z)).relative_error < 1e-4);
            assert!(check(&phi, &l.phi_grads, FD_STEP, |pp| value(&f, pp, &z)).relative_error < 1e-4);
            assert!(check(&z, &l.latent_grad, FD_STEP, |zz| value(&f, &phi, zz)).relative_error < 1e-4);

            let im = im_losses(&f, &z).unwrap();
            let total = |ff: &DenseNet, zz: &Array2<f64>| {
                let l = im_losses(ff, zz).unwrap();
                l.entropy + l.diversity
            };
            let gc = check(&f, &im.classifier_grads, FD_STEP, |ff| total(ff, &z));
            assert!(gc.relative_error < 1e-4, "{gc:?}");
            assert!(check(&z, &im.latent_grad, FD_STEP, |zz| total(&f, zz)).relative_error < 1e-4);
        }
    }
}
