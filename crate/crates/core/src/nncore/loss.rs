use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Row-wise softmax, shifted by the row maximum for stability.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Weighted mean cross-entropy `(1/n) Σ w_i CE(softmax(logit_i), y_i)` and
/// its gradient with respect to the logits.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n || weights.len() != n {
        return Err(Error::Shape(format!(
            "{n} logit rows, {} labels, {} weights",
            labels.len(),
            weights.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidLabel {
            label: bad as i64,
            classes: k,
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::InvalidWeight(format!("sample weight {w} is negative")));
    }
    let probs = softmax_rows(logits);
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
        loss += w * (lse - row[y]);
        grad[[i, y]] -= 1.0;
        grad.row_mut(i).mapv_inplace(|g| g * w * inv_n);
    }
    Ok((loss * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn peaked_logits_give_tiny_loss() {
        let logits = array![[20.0, 0.0, 0.0], [0.0, 0.0, 20.0]];
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 2], &[1.0, 1.0]).unwrap();
        assert!(loss < 1e-3);
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Array2::zeros((4, 5));
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 2, 4], &[1.0; 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weighted_two_sample_hand_value() {
        // weights 0.6/0.5 = 1.2 and 0.4/0.5 = 0.8
        // row 0: logits (1, 0), label 0: CE = ln(1 + e^-1)
        // row 1: logits (0, 2), label 1: CE = ln(1 + e^-2)
        let logits = array![[1.0, 0.0], [0.0, 2.0]];
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 1], &[1.2, 0.8]).unwrap();
        let expected = 0.5 * (1.2 * (1.0 + (-1.0f64).exp()).ln() + 0.8 * (1.0 + (-2.0f64).exp()).ln());
        assert!((loss - expected).abs() < 1e-14);
        // d/dlogit of w*CE/n = w/n * (p - onehot)
        let p0 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((grad[[0, 0]] - 0.6 * (p0 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn rejects_out_of_range_label() {
        let logits = Array2::zeros((1, 2));
        assert!(matches!(
            softmax_cross_entropy(&logits, &[2], &[1.0]),
            Err(Error::InvalidLabel { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&array![[1000.0, 999.0], [-3.0, 4.0]]);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-15);
        }
    }
}
