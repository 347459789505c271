//! Central finite-difference gradient checking.
//!
//! Only evaluates the loss closure; it never touches a backward pass, so it
//! serves as an independent oracle for every analytic gradient in the crate.

use super::adam::Params;

/// Perturbation used throughout the crate's gradient checks.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-8)`.
    pub relative_error: f64,
    pub numeric_norm: f64,
    pub entries: usize,
}

/// Numeric gradient of `loss` at `params`, one tensor per parameter tensor.
pub fn numeric_gradient<P, F>(params: &P, step: f64, loss: F) -> Vec<Vec<f64>>
where
    P: Params + Clone,
    F: Fn(&P) -> f64,
{
    let shapes = params.shapes();
    let mut out: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
    let mut probe = params.clone();
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + step;
            let up = loss(&probe);
            probe.tensors_mut()[t][i] = orig - step;
            let down = loss(&probe);
            probe.tensors_mut()[t][i] = orig;
            out[t][i] = (up - down) / (2.0 * step);
        }
    }
    out
}

/// Compares an analytic gradient against central differences.
pub fn check<P, G, F>(params: &P, analytic: &G, step: f64, loss: F) -> GradCheck
where
    P: Params + Clone,
    G: Params + ?Sized,
    F: Fn(&P) -> f64,
{
    let numeric = numeric_gradient(params, step, loss);
    let analytic = analytic.tensors();
    assert_eq!(numeric.len(), analytic.len(), "gradient tensor count mismatch");
    let (mut diff, mut a_norm, mut n_norm, mut entries) = (0.0, 0.0, 0.0, 0);
    for (a, n) in analytic.iter().zip(&numeric) {
        assert_eq!(a.len(), n.len(), "gradient tensor length mismatch");
        for (x, y) in a.iter().zip(n) {
            diff += (x - y) * (x - y);
            a_norm += x * x;
            n_norm += y * y;
            entries += 1;
        }
    }
    let denom = a_norm.sqrt().max(n_norm.sqrt()).max(1e-8);
    GradCheck {
        relative_error: diff.sqrt() / denom,
        numeric_norm: n_norm.sqrt(),
        entries,
    }
}
