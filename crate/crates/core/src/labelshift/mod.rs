//! Target label-proportion estimation from a confusion matrix, with
//! cumulative moving-average smoothing.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{Activation, DenseNet, softmax_rows};

const SIMPLEX_TOL: f64 = 1e-9;
const MAX_ITERS: usize = 10_000;
const MOVE_TOL: f64 = 1e-10;
const ILL_CONDITIONED: f64 = 1e8;

/// A point of the probability simplex over `K ≥ 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProportionVector(Vec<f64>);

impl ProportionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidProportions(format!("need at least two classes, got {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidProportions(format!("entry {v} is not a nonnegative number")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidProportions(format!("entries sum to {sum}, not 1")));
        }
        Ok(Self(values))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    /// Normalizes nonnegative masses.
    pub fn from_counts(counts: &[f64]) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidProportions("counts have no mass".into()));
        }
        Self::new(counts.iter().map(|c| c / total).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn l1_distance(&self, other: &ProportionVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    fn require_positive(&self, what: &str) -> Result<()> {
        if self.0.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidProportions(format!("{what} must be strictly positive")));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ProportionVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProportionVector> for Vec<f64> {
    fn from(p: ProportionVector) -> Self {
        p.0
    }
}

/// Joint frequency of (prediction `i`, true label `j`) on the labeled domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    matrix: Array2<f64>,
    /// True-label classes with no samples; the matrix is then rank-deficient.
    pub missing_classes: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c || r < 2 {
            return Err(Error::Shape(format!("confusion matrix must be K x K with K >= 2, got {r} x {c}")));
        }
        if matrix.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("confusion entries must be nonnegative".into()));
        }
        let sum = matrix.sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidInput(format!("confusion entries sum to {sum}, not 1")));
        }
        let missing_classes = (0..c).filter(|&j| matrix.column(j).sum() == 0.0).collect();
        Ok(Self { matrix, missing_classes })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.nrows()
    }

    /// Column sums: the labeled sample's class frequencies.
    pub fn label_frequencies(&self) -> Array1<f64> {
        self.matrix.sum_axis(Axis(0))
    }

    /// Ratio of extreme singular values; infinite when singular.
    pub fn condition_number(&self) -> f64 {
        condition_number(&self.matrix)
    }
}

fn condition_number(m: &Array2<f64>) -> f64 {
    let (r, c) = m.dim();
    let sv = DMatrix::from_row_iterator(r, c, m.iter().copied()).singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 { f64::INFINITY } else { max / min }
}

/// Class probabilities of `classifier` on `batch`: the head output when the
/// head is a softmax, else the softmax of the logits.
pub fn class_probabilities(classifier: &DenseNet, batch: &Array2<f64>) -> Result<Array2<f64>> {
    let out = classifier.predict(batch)?;
    let head = classifier.layers().last().expect("non-empty network").activation;
    Ok(if head == Activation::Softmax { out } else { softmax_rows(&out) })
}

/// `Ĉ_ij = (1/n) Σ_{samples labeled j} softmax_i(f(z))`.
pub fn soft_confusion(classifier: &DenseNet, latents: &Array2<f64>, labels: &[usize]) -> Result<ConfusionMatrix> {
    let n = latents.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::Shape(format!("{n} latents but {} labels", labels.len())));
    }
    let k = classifier.output_dim();
    let probs = class_probabilities(classifier, latents)?;
    let mut c = Array2::zeros((k, k));
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        if y >= k {
            return Err(Error::InvalidLabel { label: y as i64, classes: k });
        }
        let mut col = c.column_mut(y);
        col += &row;
    }
    c /= n as f64;
    ConfusionMatrix::new(c)
}

/// How target predictions are aggregated into a marginal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalMode {
    /// Mean softmax output.
    #[default]
    Soft,
    /// Frequencies of argmax predictions.
    Hard,
}

/// Predicted class marginal `p̂_T` of `classifier` on target latents.
pub fn target_prediction_marginal(
    classifier: &DenseNet,
    latents: &Array2<f64>,
    mode: MarginalMode,
) -> Result<ProportionVector> {
    if latents.nrows() == 0 {
        return Err(Error::InvalidBatch("target batch is empty".into()));
    }
    let probs = class_probabilities(classifier, latents)?;
    let mean = match mode {
        MarginalMode::Soft => probs.mean_axis(Axis(0)).expect("nonempty batch"),
        MarginalMode::Hard => {
            let mut counts = Array1::zeros(probs.ncols());
            for row in probs.rows() {
                counts[argmax(row.iter().copied())] += 1.0;
            }
            counts / probs.nrows() as f64
        }
    };
    renormalized(mean.to_vec())
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Absorbs the rounding drift of averaged probability rows.
fn renormalized(mut v: Vec<f64>) -> Result<ProportionVector> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    ProportionVector::new(v)
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut p: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // Exact feasibility: fold the residual rounding into the largest entry.
    let s: f64 = p.iter().sum();
    let i = argmax(p.iter().copied());
    p[i] = (p[i] + 1.0 - s).max(0.0);
    p
}

#[derive(Debug, Clone, Serialize)]
pub struct ProportionEstimate {
    pub proportions: ProportionVector,
    /// `½‖p̂_T − Ĉ (p/p_S)‖²` at the returned point.
    pub objective: f64,
    pub iterations: usize,
    pub condition_number: f64,
    /// Set when the confusion matrix is numerically rank-deficient.
    pub ill_conditioned: bool,
}

/// Solves `min_{p ∈ Δ_K} ½‖p̂_T − Ĉ diag(1/p_S) p‖²` by projected gradient
/// descent with step `1/L`.
pub fn solve_proportions(
    confusion: &ConfusionMatrix,
    target_marginal: &ProportionVector,
    source_proportions: &ProportionVector,
) -> Result<ProportionEstimate> {
    let k = confusion.num_classes();
    if target_marginal.len() != k || source_proportions.len() != k {
        return Err(Error::Shape(format!(
            "confusion is {k} x {k}, marginals have {} and {} entries",
            target_marginal.len(),
            source_proportions.len()
        )));
    }
    source_proportions.require_positive("source proportions")?;
    let a = {
        let inv = Array1::from_iter(source_proportions.values().iter().map(|p| 1.0 / p));
        confusion.matrix() * &inv
    };
    let b = Array1::from(target_marginal.values().to_vec());
    let ata = a.t().dot(&a);
    let atb = a.t().dot(&b);
    let objective = |p: &Array1<f64>| {
        let r = a.dot(p) - &b;
        0.5 * r.dot(&r)
    };
    let lipschitz = largest_eigenvalue(&ata);
    let cond = confusion.condition_number();

    let mut p = Array1::from(source_proportions.values().to_vec());
    let mut best = (objective(&p), p.clone());
    let mut iterations = 0;
    if lipschitz > 0.0 {
        while iterations < MAX_ITERS {
            iterations += 1;
            let grad = ata.dot(&p) - &atb;
            let next = Array1::from(project_to_simplex((&p - &(grad / lipschitz)).as_slice().expect("contiguous")));
            let moved = (&next - &p).mapv(f64::abs).sum();
            p = next;
            let f = objective(&p);
            if f < best.0 {
                best = (f, p.clone());
            }
            if moved < MOVE_TOL {
                break;
            }
        }
    }
    Ok(ProportionEstimate {
        proportions: ProportionVector::new(best.1.to_vec())?,
        objective: best.0,
        iterations,
        condition_number: cond,
        ill_conditioned: !(cond <= ILL_CONDITIONED),
    })
}

/// Power iteration for the top eigenvalue of a symmetric PSD matrix.
fn largest_eigenvalue(m: &Array2<f64>) -> f64 {
    let k = m.nrows();
    let mut v = Array1::from_iter((0..k).map(|i| 1.0 + i as f64 / k as f64));
    v /= v.dot(&v).sqrt();
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w / norm;
        let l = next.dot(&m.dot(&next));
        v = next;
        if (l - lambda).abs() <= 1e-14 * l.abs() {
            lambda = l;
            break;
        }
        lambda = l;
    }
    // Slight overestimate keeps the step safely below 2/L.
    lambda * (1.0 + 1e-9)
}

/// Running mean of successive proportion estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaState {
    pub estimate: ProportionVector,
    pub count: u64,
}

impl CmaState {
    pub fn new(initial: ProportionVector) -> Self {
        Self { estimate: initial, count: 0 }
    }
}

pub fn cma_update(state: &CmaState, new: &ProportionVector) -> Result<CmaState> {
    if new.len() != state.estimate.len() {
        return Err(Error::Shape("proportion vectors differ in length".into()));
    }
    let c = state.count as f64;
    let v: Vec<f64> = state
        .estimate
        .values()
        .iter()
        .zip(new.values())
        .map(|(o, n)| (c * o + n) / (c + 1.0))
        .collect();
    Ok(CmaState {
        estimate: renormalized(v)?,
        count: state.count + 1,
    })
}
