//! Datasets: the synthetic benchmark generator, label-imbalance
//! subsampling, and feature CSV input/output.

mod csv;
mod imbalance;
mod synthetic;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv::{load_feature_csv, load_label_csv, write_feature_csv, write_label_csv};
pub use imbalance::{ImbalanceScheme, scheme_proportions, subsample_imbalance, subsample_to};
pub use synthetic::{AffineMap, ClassSpec, GetarsData, SyntheticSpec, generate_getars};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Source,
    /// Target samples; labels, when present, are evaluation oracles only.
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    num_classes: usize,
    domain: Domain,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Option<Vec<usize>>, num_classes: usize, domain: Domain) -> Result<Self> {
        let n = features.nrows();
        if n == 0 || features.ncols() == 0 {
            return Err(Error::InvalidDataset(format!("dataset is {n} x {}", features.ncols())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("features contain non-finite values".into()));
        }
        if domain == Domain::Source && labels.is_none() {
            return Err(Error::InvalidDataset("source samples must be labeled".into()));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape(format!("{n} rows but {} labels", l.len())));
            }
            if let Some(&y) = l.iter().find(|&&y| y >= num_classes) {
                return Err(Error::InvalidLabel {
                    label: y as i64,
                    classes: num_classes,
                });
            }
        }
        Ok(Self {
            features: features.as_standard_layout().into_owned(),
            labels,
            num_classes,
            domain,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Training labels; only source datasets expose them.
    pub fn labels(&self) -> Result<&[usize]> {
        match (self.domain, &self.labels) {
            (Domain::Source, Some(l)) => Ok(l),
            _ => Err(Error::InvalidDataset("target labels are not available for training".into())),
        }
    }

    /// Labels for evaluation, from either domain.
    pub fn oracle_labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn with_oracle_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.features.clone(), Some(labels), self.num_classes, self.domain)
    }

    /// Per-class sample counts; `None` when unlabeled.
    pub fn class_counts(&self) -> Option<Vec<usize>> {
        let l = self.labels.as_ref()?;
        let mut c = vec![0; self.num_classes];
        for &y in l {
            c[y] += 1;
        }
        Some(c)
    }

    /// Empirical label frequencies; `None` when unlabeled.
    pub fn class_frequencies(&self) -> Option<Vec<f64>> {
        let n = self.len() as f64;
        Some(self.class_counts()?.into_iter().map(|c| c as f64 / n).collect())
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), indices);
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(features, labels, self.num_classes, self.domain)
    }
}

/// Rows of `points` grouped by label, one matrix per class (possibly empty).
pub fn group_by_class(points: &Array2<f64>, labels: &[usize], num_classes: usize) -> Vec<Array2<f64>> {
    (0..num_classes)
        .map(|k| {
            let idx: Vec<usize> = labels.iter().enumerate().filter(|(_, &y)| y == k).map(|(i, _)| i).collect();
            points.select(Axis(0), &idx)
        })
        .collect()
}
