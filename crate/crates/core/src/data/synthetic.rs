//! Gaussian-mixture benchmark under generalized target shift: every class
//! conditional moves by its own affine map and the label marginal changes.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Domain, LabeledDataset, group_by_class};
use crate::error::{Error, Result};
use crate::labelshift::ProportionVector;
use crate::ot::{MonotonicityReport, WeightedCloud, check_cyclical_monotonicity};
use crate::rng::{self, BoxMuller};

/// `x ↦ matrix · x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMap {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        Self {
            matrix: (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect(),
            offset: vec![0.0; d],
        }
    }

    pub fn rotation_2d(degrees: f64, offset: [f64; 2]) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        Self {
            matrix: vec![vec![c, -s], vec![s, c]],
            offset: offset.to_vec(),
        }
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x.len();
        let m = DMatrix::from_fn(d, d, |i, j| self.matrix[i][j]);
        m * x + DVector::from_column_slice(&self.offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Maps fresh source-distributed draws to the target conditional.
    pub target_transform: AffineMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassSpec>,
    pub source_proportions: Vec<f64>,
    pub target_proportions: Vec<f64>,
    pub n_source: usize,
    pub n_target: usize,
    pub seed: u64,
    #[serde(default = "default_probe")]
    pub probe_per_class: usize,
}

fn default_probe() -> usize {
    200
}

impl SyntheticSpec {
    /// Three unit-variance blobs at mutual distance 8; each target
    /// conditional is rotated by 15 degrees and shifted by 0.5.
    pub fn blobs_k3() -> Self {
        let r = 8.0 / 3f64.sqrt();
        let classes = [90.0f64, 210.0, 330.0]
            .iter()
            .map(|a| {
                let (s, c) = a.to_radians().sin_cos();
                ClassSpec {
                    mean: vec![r * c, r * s],
                    covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    target_transform: AffineMap::rotation_2d(15.0, [0.5, 0.0]),
                }
            })
            .collect();
        Self {
            classes,
            source_proportions: vec![1.0 / 3.0; 3],
            target_proportions: vec![0.6, 0.25, 0.15],
            n_source: 1000,
            n_target: 1000,
            seed: 0,
            probe_per_class: default_probe(),
        }
    }

    /// Exchanges where the target conditionals of classes `i` and `j` land,
    /// so each is mapped onto the other's target location.
    pub fn with_swapped_targets(mut self, i: usize, j: usize) -> Self {
        let image = |c: &ClassSpec| c.target_transform.apply(&DVector::from_column_slice(&c.mean));
        let (ti, tj) = (image(&self.classes[i]), image(&self.classes[j]));
        let shift = |c: &mut ClassSpec, to: &DVector<f64>| {
            let at = c.target_transform.apply(&DVector::from_column_slice(&c.mean));
            for (o, d) in c.target_transform.offset.iter_mut().zip((to - at).iter()) {
                *o += d;
            }
        };
        shift(&mut self.classes[i], &tj);
        shift(&mut self.classes[j], &ti);
        self
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.mean.len())
    }

    /// Validates the spec and returns per-class Cholesky factors.
    fn factors(&self) -> Result<Vec<DMatrix<f64>>> {
        let k = self.num_classes();
        let d = self.dim();
        if k < 2 || d == 0 {
            return Err(Error::InvalidSpec(format!("need at least two classes and d >= 1, got K={k}, d={d}")));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::InvalidSpec("sample counts must be positive".into()));
        }
        for (what, p) in [("source", &self.source_proportions), ("target", &self.target_proportions)] {
            if p.len() != k {
                return Err(Error::InvalidSpec(format!("{what} proportions have {} entries for {k} classes", p.len())));
            }
            ProportionVector::new(p.clone()).map_err(|e| Error::InvalidSpec(format!("{what} proportions: {e}")))?;
        }
        self.classes
            .iter()
            .enumerate()
            .map(|(c, cs)| {
                let t = &cs.target_transform;
                let square = |m: &Vec<Vec<f64>>| m.len() == d && m.iter().all(|r| r.len() == d);
                if cs.mean.len() != d || !square(&cs.covariance) || !square(&t.matrix) || t.offset.len() != d {
                    return Err(Error::InvalidSpec(format!("class {c} has inconsistent dimensions")));
                }
                let cov = DMatrix::from_fn(d, d, |i, j| cs.covariance[i][j]);
                if (&cov - cov.transpose()).amax() > 1e-12 {
                    return Err(Error::InvalidSpec(format!("class {c} covariance is not symmetric")));
                }
                cov.cholesky()
                    .map(|ch| ch.l())
                    .ok_or_else(|| Error::InvalidSpec(format!("class {c} covariance is not positive definite")))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GetarsData {
    pub source: LabeledDataset,
    /// Carries oracle labels for evaluation.
    pub target: LabeledDataset,
    /// Monotonicity of the construction, checked in input space.
    pub probe: MonotonicityReport,
}

fn draw_labels(n: usize, p: &[f64], r: &mut impl Rng) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let u: f64 = r.gen();
            let mut acc = 0.0;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    return k;
                }
            }
            // Rounding at the top end: last class with mass.
            p.iter().rposition(|&pk| pk > 0.0).expect("proportions have mass")
        })
        .collect()
}

struct Sampler<'a> {
    spec: &'a SyntheticSpec,
    factors: Vec<DMatrix<f64>>,
}

impl Sampler<'_> {
    fn draw(&self, labels: &[usize], target: bool, r: &mut impl Rng) -> Array2<f64> {
        let d = self.spec.dim();
        let mut bm = BoxMuller::new();
        let mut out = Array2::zeros((labels.len(), d));
        for (i, &y) in labels.iter().enumerate() {
            let cs = &self.spec.classes[y];
            let z = DVector::from_fn(d, |_, _| bm.sample(r));
            let mut x = &self.factors[y] * z + DVector::from_column_slice(&cs.mean);
            if target {
                x = cs.target_transform.apply(&x);
            }
            for j in 0..d {
                out[[i, j]] = x[j];
            }
        }
        out
    }
}

pub fn generate_getars(spec: &SyntheticSpec) -> Result<GetarsData> {
    let factors = spec.factors()?;
    let k = spec.num_classes();
    let sampler = Sampler { spec, factors };
    let seed = spec.seed;

    let ys = draw_labels(spec.n_source, &spec.source_proportions, &mut rng::stream(seed, "source-labels", 0));
    let xs = sampler.draw(&ys, false, &mut rng::stream(seed, "source-features", 0));
    let yt = draw_labels(spec.n_target, &spec.target_proportions, &mut rng::stream(seed, "target-labels", 0));
    let xt = sampler.draw(&yt, true, &mut rng::stream(seed, "target-features", 0));

    let probe_labels: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(c, spec.probe_per_class.max(1))).collect();
    let ps = sampler.draw(&probe_labels, false, &mut rng::stream(seed, "probe-source", 0));
    let pt = sampler.draw(&probe_labels, true, &mut rng::stream(seed, "probe-target", 0));
    let clouds = |x: &Array2<f64>| -> Result<Vec<WeightedCloud>> {
        group_by_class(x, &probe_labels, k)
            .into_iter()
            .map(WeightedCloud::uniform)
            .collect()
    };
    let probe = check_cyclical_monotonicity(&clouds(&ps)?, &clouds(&pt)?)?;

    Ok(GetarsData {
        source: LabeledDataset::new(xs, Some(ys), k, Domain::Source)?,
        target: LabeledDataset::new(xt, Some(yt), k, Domain::Target)?,
        probe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::exact_wasserstein;

    fn same_distribution(n: usize, seed: u64) -> SyntheticSpec {
        let mut s = SyntheticSpec::blobs_k3();
        for c in &mut s.classes {
            c.target_transform = AffineMap::identity(2);
        }
        s.target_proportions = s.source_proportions.clone();
        s.n_source = n;
        s.n_target = n;
        s.seed = seed;
        s.probe_per_class = 20;
        s
    }

    #[test]
    fn blobs_geometry() {
        let s = SyntheticSpec::blobs_k3();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let d: f64 = s.classes[i].mean.iter().zip(&s.classes[j].mean).map(|(a, b)| (a - b).powi(2)).sum();
                assert!((d.sqrt() - 8.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blobs_probe_holds() {
        let g = generate_getars(&SyntheticSpec::blobs_k3()).unwrap();
        assert!(g.probe.holds, "{:?}", g.probe);
        assert!(g.probe.margin > 0.0);
        assert_eq!(g.source.len(), 1000);
        assert!(g.target.oracle_labels().is_some());
        assert!(g.target.labels().is_err());
    }

    #[test]
    fn swapped_construction_violates_monotonicity() {
        let mut s = SyntheticSpec::blobs_k3().with_swapped_targets(0, 1);
        s.probe_per_class = 100;
        let g = generate_getars(&s).unwrap();
        assert!(!g.probe.holds);
    }

    #[test]
    fn identical_distributions_are_close_in_w1() {
        // One unit-variance blob per domain; the mixture version adds label
        // count noise that moves mass across classes 8 apart.
        for seed in 0..3 {
            let mut s = same_distribution(500, seed);
            s.source_proportions = vec![1.0, 0.0, 0.0];
            s.target_proportions = vec![1.0, 0.0, 0.0];
            let g = generate_getars(&s).unwrap();
            let a = WeightedCloud::uniform(g.source.features().clone()).unwrap();
            let b = WeightedCloud::uniform(g.target.features().clone()).unwrap();
            let w = exact_wasserstein(&a, &b, 1).unwrap().distance;
            assert!(w < 0.3, "seed {seed}: W1 = {w}");
        }
    }

    #[test]
    fn high_imbalance_frequencies() {
        let mut s = SyntheticSpec::blobs_k3();
        s.target_proportions = vec![0.22 / 0.51, 0.22 / 0.51, 0.07 / 0.51];
        s.n_target = 2000;
        s.probe_per_class = 10;
        let g = generate_getars(&s).unwrap();
        let f = g.target.class_frequencies().unwrap();
        let l1: f64 = f.iter().zip(&s.target_proportions).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 0.05, "{f:?}");
    }

    #[test]
    fn proportions_converge_on_average() {
        let n = 400;
        let mut total = 0.0;
        for seed in 0..20 {
            let mut s = SyntheticSpec::blobs_k3();
            s.n_source = n;
            s.seed = seed;
            s.probe_per_class = 5;
            let f = generate_getars(&s).unwrap().source.class_frequencies().unwrap();
            total += f.iter().map(|v| (v - 1.0 / 3.0).abs()).sum::<f64>();
        }
        assert!(total / 20.0 <= 2.0 / (n as f64).sqrt());
    }

    #[test]
    fn bitwise_deterministic() {
        let s = same_distribution(100, 9);
        let a = generate_getars(&s).unwrap();
        let b = generate_getars(&s).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
    }

    #[test]
    fn rejects_bad_covariance() {
        let mut s = SyntheticSpec::blobs_k3();
        s.classes[1].covariance = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(generate_getars(&s), Err(Error::InvalidSpec(_))));
        let mut s = SyntheticSpec::blobs_k3();
        s.target_proportions = vec![0.5, 0.5, 0.5];
        assert!(matches!(generate_getars(&s), Err(Error::InvalidSpec(_))));
    }
}
