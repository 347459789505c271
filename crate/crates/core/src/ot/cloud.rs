use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Empirical measure: points with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCloud {
    points: Array2<f64>,
    weights: Vec<f64>,
}

impl WeightedCloud {
    pub fn new(points: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidInput("empty cloud".into()));
        }
        if weights.len() != points.nrows() {
            return Err(Error::Shape(format!(
                "{} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidWeight(format!("cloud weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeight(format!("cloud weights sum to {total}, not 1")));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("empty cloud".into()));
        }
        Self::new(points, vec![1.0 / n as f64; n])
    }

    /// Normalizes arbitrary nonnegative masses into a cloud.
    pub fn from_masses(points: Array2<f64>, masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidWeight(format!("cloud masses sum to {total}")));
        }
        Self::new(points, masses.iter().map(|m| m / total).collect())
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() <= 1e-12)
    }

    pub fn mean(&self) -> ndarray::Array1<f64> {
        let w = ndarray::Array1::from(self.weights.clone());
        (&self.points * &w.insert_axis(Axis(1))).sum_axis(Axis(0))
    }
}

/// Transport plan between two clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub plan: Array2<f64>,
}

impl Coupling {
    /// Largest violation of nonnegativity or of either marginal constraint.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let rows = self.plan.sum_axis(Axis(1));
        let cols = self.plan.sum_axis(Axis(0));
        let neg = self.plan.iter().fold(0.0f64, |m, &v| m.max(-v));
        let r = rows.iter().zip(a).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let c = cols.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        neg.max(r).max(c)
    }
}

/// `K × K` matrix of distances between source conditional `i` (rows) and
/// target conditional `j` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(pub Array2<f64>);

impl CostMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("cost matrix has non-finite entries".into()));
        }
        Ok(Self(m))
    }

    pub fn size(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn permutation_cost(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.0[[i, j]]).sum()
    }

    /// CSV with one row per source class and a `source_class,t0,t1,...` header.
    pub fn to_csv(&self) -> String {
        let (k, m) = self.0.dim();
        let mut out = String::from("source_class");
        for j in 0..m {
            out.push_str(&format!(",t{j}"));
        }
        out.push('\n');
        for i in 0..k {
            out.push_str(&i.to_string());
            for j in 0..m {
                out.push_str(&format!(",{}", self.0[[i, j]]));
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise ground cost `‖x − y‖₂^p`.
pub fn ground_cost(a: &Array2<f64>, b: &Array2<f64>, p: u32) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        let sq: f64 = a
            .row(i)
            .iter()
            .zip(b.row(j).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        match p {
            1 => sq.sqrt(),
            2 => sq,
            _ => sq.sqrt().powi(p as i32),
        }
    })
}
