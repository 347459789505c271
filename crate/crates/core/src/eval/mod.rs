//! Metrics, target-risk bound terms computed with exact transport, and
//! assumption diagnostics.

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::data::{LabeledDataset, group_by_class};
use crate::error::{Error, Result};
use crate::labelshift::ProportionVector;
use crate::nncore::{DenseNet, ResidualMap};
use crate::ot::{
    MonotonicityReport, WeightedCloud, check_cyclical_monotonicity, conditional_cost_matrix, exact_wasserstein,
    optimal_assignment,
};
use crate::pipeline::{OstarModel, class_weights};
use crate::rng;

/// Mean per-class recall over the classes present in `labels`.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    if labels.is_empty() || predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::InvalidLabel {
                label: y as i64,
                classes: num_classes,
            });
        }
        totals[y] += 1;
        hits[y] += usize::from(p == y);
    }
    let recalls: Vec<f64> = totals
        .iter()
        .zip(&hits)
        .filter(|(t, _)| **t > 0)
        .map(|(&t, &h)| h as f64 / t as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

pub fn l1_proportion_error(estimate: &ProportionVector, truth: &ProportionVector) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Shape(format!("{} vs {} classes", estimate.len(), truth.len())));
    }
    Ok(estimate.l1_distance(truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalOptions {
    /// Per-domain cap on samples entering exact transport problems.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { max_points: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub term_c: f64,
    pub term_a: f64,
    pub term_l: f64,
    pub min_p_n: f64,
    pub lipschitz: f64,
    pub rhs: f64,
    pub empirical_target_risk: f64,
}

/// `C + 2M/min · A + 2M(1 + 1/min) · L`.
pub fn assemble_rhs(term_c: f64, term_a: f64, term_l: f64, min_p_n: f64, lipschitz: f64) -> f64 {
    term_c + 2.0 * lipschitz / min_p_n * term_a + 2.0 * lipschitz * (1.0 + 1.0 / min_p_n) * term_l
}

/// Deterministic subset of at most `cap` row indices, in increasing order.
fn capped(n: usize, cap: usize, seed: u64, name: &str) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut idx = rng::permutation(n, &mut rng::stream(seed, name, 0))[..cap].to_vec();
    idx.sort_unstable();
    idx
}

/// The two clouds of the alignment term: mapped source latents weighted by
/// `p_N[y]/p_S[y]` (renormalized) and uniform target latents.
pub fn alignment_clouds(
    model: &OstarModel,
    s: &LabeledDataset,
    t: &LabeledDataset,
    opts: &EvalOptions,
) -> Result<(WeightedCloud, WeightedCloud)> {
    let si = capped(s.len(), opts.max_points, opts.seed, "bound-source");
    let ti = capped(t.len(), opts.max_points, opts.seed, "bound-target");
    let xs = s.features().select(Axis(0), &si);
    let ys: Vec<usize> = si.iter().map(|&i| s.labels().map(|l| l[i])).collect::<Result<_>>()?;
    let zn = model.phi.apply(&model.encode(&xs)?)?;
    let w = class_weights(&ys, &model.p_n.estimate, &model.p_s)?;
    let zt = model.encode(&t.features().select(Axis(0), &ti))?;
    Ok((WeightedCloud::from_masses(zn, &w)?, WeightedCloud::uniform(zt)?))
}

/// Mean per-sample squared displacement `‖φ(z) − z‖²`.
pub fn mean_displacement(phi: &ResidualMap, latents: &Array2<f64>) -> Result<f64> {
    if latents.nrows() == 0 {
        return Err(Error::InvalidInput("displacement of an empty batch".into()));
    }
    let moved = phi.apply(latents)? - latents;
    Ok(moved.mapv(|v| v * v).sum() / latents.nrows() as f64)
}

/// Terms of the target-risk bound. Needs target oracle labels.
pub fn bound_terms(model: &OstarModel, s: &LabeledDataset, t: &LabeledDataset, opts: &EvalOptions) -> Result<BoundReport> {
    let t_labels = t
        .oracle_labels()
        .ok_or_else(|| Error::UnavailableOracle("bound terms need target labels".into()))?;
    let k = model.num_classes();

    // Classification term: importance-weighted 0/1 risk on the mapped source.
    let ys = s.labels()?;
    let zn = model.phi.apply(&model.encode(s.features())?)?;
    let pred = crate::pipeline::argmax_rows(&model.target_classifier.predict(&zn)?)?;
    let w = class_weights(ys, &model.p_n.estimate, &model.p_s)?;
    let total: f64 = w.iter().sum();
    let wrong: f64 = pred.iter().zip(ys).zip(&w).filter(|((p, y), _)| p != y).map(|(_, w)| w).sum();
    let term_c = wrong / total + 0.0;

    let (a, b) = alignment_clouds(model, s, t, opts)?;
    let term_a = exact_wasserstein(&a, &b, 1)?.distance;

    let ti = capped(t.len(), opts.max_points, opts.seed, "bound-target");
    let yt: Vec<usize> = ti.iter().map(|&i| t_labels[i]).collect();
    let term_l = label_term(&model.encode(&t.features().select(Axis(0), &ti))?, &yt, &model.p_n.estimate, k)?;

    let min_p_n = model.p_n.estimate.min();
    let lipschitz = model.target_classifier.lipschitz_upper_bound();
    let tp = model.predict_target(t.features())?;
    let empirical_target_risk = tp.iter().zip(t_labels).filter(|(p, y)| p != y).count() as f64 / t.len() as f64;
    Ok(BoundReport {
        term_c,
        term_a,
        term_l,
        min_p_n,
        lipschitz,
        rhs: assemble_rhs(term_c, term_a, term_l, min_p_n, lipschitz),
        empirical_target_risk,
    })
}

/// `W_1(Σ_k p_T^k p_T(Z|k), Σ_k p_N^k p_T(Z|k))` realized as two
/// reweightings of one labeled target cloud; `p_T` is the cloud's own label
/// frequency. Classes absent from the cloud carry no mass.
pub fn label_term(zt: &Array2<f64>, yt: &[usize], p_n: &ProportionVector, num_classes: usize) -> Result<f64> {
    let mut counts = vec![0usize; num_classes];
    for &y in yt {
        counts[y] += 1;
    }
    let uniform = WeightedCloud::uniform(zt.clone())?;
    let masses: Vec<f64> = yt.iter().map(|&y| p_n.values()[y] / counts[y] as f64).collect();
    let reweighted = WeightedCloud::from_masses(zt.clone(), &masses)?;
    Ok(exact_wasserstein(&uniform, &reweighted, 1)?.distance)
}

/// Optimal pairing of mapped source conditionals with oracle target
/// conditionals under the exact `W_2` cost matrix. Identity means each
/// source class was transported onto its own target class.
pub fn conditional_matching(
    model: &OstarModel,
    s: &LabeledDataset,
    t: &LabeledDataset,
    max_per_class: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let t_labels = t
        .oracle_labels()
        .ok_or_else(|| Error::UnavailableOracle("matching needs target labels".into()))?;
    let k = model.num_classes();
    let zn = model.phi.apply(&model.encode(s.features())?)?;
    let zt = model.encode(t.features())?;
    let gs = group_by_class(&zn, s.labels()?, k);
    let gt = group_by_class(&zt, t_labels, k);
    let clouds = |g: &[Array2<f64>], name: &str| -> Result<Vec<WeightedCloud>> {
        g.iter()
            .enumerate()
            .map(|(c, g)| {
                let idx = capped(g.nrows(), max_per_class, rng::derive_seed(seed, name, c as u64), "probe");
                WeightedCloud::uniform(g.select(Axis(0), &idx))
            })
            .collect()
    };
    let cost = conditional_cost_matrix(&clouds(&gs, "match-source")?, &clouds(&gt, "match-target")?)?;
    optimal_assignment(&cost)
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    /// Nearest-centroid accuracy on source latents.
    pub a1_nearest_centroid_accuracy: f64,
    pub a2: &'static str,
    pub a3: MonotonicityReport,
    /// Smallest singular value of the class-by-moment matrix of target
    /// latent conditionals.
    pub a4_min_singular_value: f64,
}

/// Diagnostics of the method's assumptions in the latent space of `encoder`.
pub fn assumption_report(
    encoder: &DenseNet,
    s: &LabeledDataset,
    t: &LabeledDataset,
    max_per_class: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    let t_labels = t
        .oracle_labels()
        .ok_or_else(|| Error::UnavailableOracle("assumption report needs target labels".into()))?;
    let k = s.num_classes();
    let zs = encoder.predict(s.features())?;
    let zt = encoder.predict(t.features())?;
    let ys = s.labels()?;
    let gs = group_by_class(&zs, ys, k);
    let gt = group_by_class(&zt, t_labels, k);
    if let Some(c) = (0..k).find(|&c| gs[c].nrows() == 0 || gt[c].nrows() == 0) {
        return Err(Error::InvalidDataset(format!("class {c} is missing from a domain")));
    }

    let centroids: Vec<_> = gs.iter().map(|g| g.mean_axis(Axis(0)).expect("nonempty class")).collect();
    let correct = zs
        .rows()
        .into_iter()
        .zip(ys)
        .filter(|(z, y)| {
            let d: Vec<f64> = centroids.iter().map(|c| (&z.to_owned() - c).mapv(|v| v * v).sum()).collect();
            crate::labelshift::argmax(d.iter().map(|v| -v)) == **y
        })
        .count();

    let cap = |g: &Array2<f64>, c: usize, name: &str| -> Result<WeightedCloud> {
        let idx = capped(g.nrows(), max_per_class, rng::derive_seed(seed, name, c as u64), "probe");
        WeightedCloud::uniform(g.select(Axis(0), &idx))
    };
    let sc = (0..k).map(|c| cap(&gs[c], c, "a3-source")).collect::<Result<Vec<_>>>()?;
    let tc = (0..k).map(|c| cap(&gt[c], c, "a3-target")).collect::<Result<Vec<_>>>()?;
    let a3 = check_cyclical_monotonicity(&sc, &tc)?;

    Ok(AssumptionReport {
        a1_nearest_centroid_accuracy: correct as f64 / s.len() as f64,
        a2: "not directly checkable: a property of the learned map",
        a3,
        a4_min_singular_value: moment_matrix_min_singular_value(&gt),
    })
}

/// Rows: per-class mean and upper-triangular second moments.
pub fn moment_matrix_min_singular_value(conditionals: &[Array2<f64>]) -> f64 {
    let d = conditionals[0].ncols();
    let width = d + d * (d + 1) / 2;
    let mut m = DMatrix::zeros(conditionals.len(), width);
    for (k, g) in conditionals.iter().enumerate() {
        let n = g.nrows() as f64;
        let mean = g.mean_axis(Axis(0)).expect("nonempty class");
        for j in 0..d {
            m[(k, j)] = mean[j];
        }
        let mut col = d;
        for a in 0..d {
            for b in a..d {
                m[(k, col)] = g.column(a).dot(&g.column(b)) / n;
                col += 1;
            }
        }
    }
    m.singular_values().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn p(v: &[f64]) -> ProportionVector {
        ProportionVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn balanced_accuracy_cases() {
        assert_eq!(balanced_accuracy(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap(), 0.5);
        let pred = [0, 0, 0, 1, 1, 0];
        let lab = [0, 0, 0, 0, 1, 1];
        assert!((balanced_accuracy(&pred, &lab, 2).unwrap() - 0.625).abs() < 1e-15);
        assert!(matches!(balanced_accuracy(&[], &[], 2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn balanced_accuracy_is_relabeling_invariant() {
        let pred = [0, 2, 1, 1, 0, 2, 2, 1];
        let lab = [0, 2, 2, 1, 1, 2, 0, 1];
        let perm = [2, 0, 1];
        let a = balanced_accuracy(&pred, &lab, 3).unwrap();
        let pp: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let pl: Vec<usize> = lab.iter().map(|&c| perm[c]).collect();
        assert_eq!(a, balanced_accuracy(&pp, &pl, 3).unwrap());
    }

    #[test]
    fn l1_errors() {
        assert_eq!(l1_proportion_error(&p(&[0.5, 0.5]), &p(&[0.5, 0.5])).unwrap(), 0.0);
        assert_eq!(l1_proportion_error(&p(&[1.0, 0.0]), &p(&[0.0, 1.0])).unwrap(), 2.0);
        assert!((l1_proportion_error(&p(&[0.6, 0.4]), &p(&[0.5, 0.5])).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn label_term_miniature() {
        // Two clusters at 0 and 10 (two points each). p_T = (0.75, 0.25) from
        // three class-0 points... use 3 + 1 points so the cloud frequency is
        // (0.75, 0.25); p_N uniform moves 0.25 mass from 0 to 10: W1 = 2.5.
        let zt = array![[0.0], [0.0], [0.0], [10.0]];
        let w = label_term(&zt, &[0, 0, 0, 1], &p(&[0.5, 0.5]), 2).unwrap();
        assert!((w - 2.5).abs() < 1e-12);
        assert!(label_term(&zt, &[0, 0, 0, 1], &p(&[0.75, 0.25]), 2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rhs_is_monotone() {
        let base = assemble_rhs(0.1, 0.2, 0.3, 0.25, 2.0);
        assert!(assemble_rhs(0.2, 0.2, 0.3, 0.25, 2.0) >= base);
        assert!(assemble_rhs(0.1, 0.3, 0.3, 0.25, 2.0) >= base);
        assert!(assemble_rhs(0.1, 0.2, 0.4, 0.25, 2.0) >= base);
        assert!(assemble_rhs(0.1, 0.0, 0.0, 0.25, 2.0) == 0.1);
    }

    #[test]
    fn duplicated_conditionals_are_singular() {
        let a = array![[0.0, 1.0], [2.0, 3.0], [1.0, -1.0]];
        let b = array![[5.0, 5.0], [6.0, 4.0]];
        assert!(moment_matrix_min_singular_value(&[a.clone(), b.clone(), a.clone()]) < 1e-10);
        assert!(moment_matrix_min_singular_value(&[a, b]) > 1e-3);
    }

    fn pretrained(seed: u64) -> (OstarModel, LabeledDataset, LabeledDataset) {
        let spec = crate::data::SyntheticSpec {
            n_source: 300,
            n_target: 300,
            seed,
            ..crate::data::SyntheticSpec::blobs_k3()
        };
        let d = crate::data::generate_getars(&spec).unwrap();
        let cfg = crate::pipeline::TrainConfig {
            epochs: 0,
            ss_epochs: 0,
            seed,
            ..Default::default()
        };
        let (m, _) = crate::pipeline::run_ostar(&d.source, &d.target, &cfg).unwrap();
        (m, d.source, d.target)
    }

    #[test]
    fn oracle_free_target_is_reported() {
        let (m, s, t) = pretrained(0);
        let t = t.without_labels();
        assert!(matches!(
            bound_terms(&m, &s, &t, &EvalOptions::default()),
            Err(Error::UnavailableOracle(_))
        ));
        assert!(matches!(
            assumption_report(&m.encoder, &s, &t, 50, 0),
            Err(Error::UnavailableOracle(_))
        ));
    }

    #[test]
    fn alignment_clouds_carry_class_ratios() {
        let (mut m, s, t) = pretrained(1);
        m.p_n.estimate = p(&[0.5, 0.3, 0.2]);
        let (a, b) = alignment_clouds(&m, &s, &t, &EvalOptions::default()).unwrap();
        assert!(b.is_uniform());
        let labels = s.labels().unwrap();
        let mut mass = [0.0; 3];
        for (w, &y) in a.weights().iter().zip(labels) {
            mass[y] += w;
        }
        for (got, want) in mass.iter().zip([0.5, 0.3, 0.2]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_holds_and_terms_are_consistent() {
        let (m, s, t) = pretrained(2);
        let r = bound_terms(&m, &s, &t, &EvalOptions::default()).unwrap();
        assert!(r.term_c >= 0.0 && r.term_a >= 0.0 && r.term_l >= 0.0);
        assert_eq!(r.rhs, assemble_rhs(r.term_c, r.term_a, r.term_l, r.min_p_n, r.lipschitz));
        assert!(r.empirical_target_risk <= r.rhs + 0.05);
        let (a, b) = alignment_clouds(&m, &s, &t, &EvalOptions::default()).unwrap();
        assert_eq!(r.term_a, exact_wasserstein(&a, &b, 1).unwrap().distance);
    }

    #[test]
    fn blobs_satisfy_the_assumptions() {
        let (m, s, t) = pretrained(3);
        let r = assumption_report(&m.encoder, &s, &t, 60, 0).unwrap();
        assert!(r.a1_nearest_centroid_accuracy > 0.95);
        assert!(r.a3.holds && r.a3.margin > 0.0);
        assert!(r.a4_min_singular_value > 1e-3);
        assert_eq!(conditional_matching(&m, &s, &t, 60, 0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn identity_map_displaces_nothing() {
        let phi = ResidualMap::identity(2, 4, 3, crate::nncore::InitScheme::Normal, 0.3, 0).unwrap();
        let z = array![[1.0, 2.0], [-3.0, 0.5]];
        assert_eq!(mean_displacement(&phi, &z).unwrap(), 0.0);
    }
}
