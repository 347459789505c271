//! Label-imbalance subsampling.
//!
//! The ten-class tables are reproduced exactly; other class counts use the
//! same weights by position: the two middle classes `K/2 − 1, K/2` are the
//! heavy ones, and under `mild` the last `⌊3K/10⌋` classes form the tail.

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImbalanceScheme {
    Balanced,
    /// `{0,1,2,3,6}=0.06, {4,5}=0.2, {7,8,9}=0.1` for ten classes.
    Mild,
    /// `{4,5}=0.22`, every other class `0.07` for ten classes.
    High,
    /// The first `⌈K/2⌉` classes keep 30% of their samples, the rest all.
    #[serde(rename = "half-classes-30pct")]
    HalfClasses30Pct,
}

fn heavy_pair(k: usize) -> [usize; 2] {
    let hi = (k / 2).max(1);
    [hi - 1, hi]
}

/// Target proportions of a proportion scheme; `None` for retention schemes.
pub fn scheme_proportions(scheme: ImbalanceScheme, k: usize) -> Option<Vec<f64>> {
    let heavy = heavy_pair(k);
    let weights: Vec<f64> = match scheme {
        ImbalanceScheme::Balanced => vec![1.0; k],
        ImbalanceScheme::High => (0..k).map(|c| if heavy.contains(&c) { 22.0 } else { 7.0 }).collect(),
        ImbalanceScheme::Mild => {
            let tail = k - 3 * k / 10;
            (0..k)
                .map(|c| {
                    if heavy.contains(&c) {
                        20.0
                    } else if c >= tail {
                        10.0
                    } else {
                        6.0
                    }
                })
                .collect()
        }
        ImbalanceScheme::HalfClasses30Pct => return None,
    };
    let total: f64 = weights.iter().sum();
    Some(weights.into_iter().map(|w| w / total).collect())
}

/// Resamples `ds` without replacement. Proportion schemes take the largest
/// subset whose class frequencies follow the scheme; the retention scheme
/// keeps 30% of each of the first `⌈K/2⌉` classes.
pub fn subsample_imbalance(ds: &LabeledDataset, scheme: ImbalanceScheme, seed: u64) -> Result<LabeledDataset> {
    let k = ds.num_classes();
    let counts = ds
        .class_counts()
        .ok_or_else(|| Error::InvalidDataset("imbalance subsampling needs labels".into()))?;
    match scheme_proportions(scheme, k) {
        Some(p) => {
            let size = p
                .iter()
                .zip(&counts)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, &c)| (c as f64 / p).floor() as usize)
                .min()
                .unwrap_or(0);
            subsample_to(ds, &p, size, seed)
        }
        None => {
            let keep: Vec<usize> = counts
                .iter()
                .enumerate()
                .map(|(c, &n)| if c < k.div_ceil(2) { (0.3 * n as f64).round() as usize } else { n })
                .collect();
            take_per_class(ds, &keep, seed)
        }
    }
}

/// Draws `size` samples without replacement with class frequencies as
/// close to `proportions` as integer counts allow.
pub fn subsample_to(ds: &LabeledDataset, proportions: &[f64], size: usize, seed: u64) -> Result<LabeledDataset> {
    let k = ds.num_classes();
    let counts = ds
        .class_counts()
        .ok_or_else(|| Error::InvalidDataset("imbalance subsampling needs labels".into()))?;
    if proportions.len() != k {
        return Err(Error::Shape(format!("{k} classes but {} proportions", proportions.len())));
    }
    if size == 0 {
        return Err(Error::InfeasibleScheme("scheme leaves no samples".into()));
    }
    // Largest-remainder rounding of size * p.
    let exact: Vec<f64> = proportions.iter().map(|p| p * size as f64).collect();
    let mut want: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut short = size - want.iter().sum::<usize>();
    for &c in order.iter().cycle().take(k * 2) {
        if short == 0 {
            break;
        }
        if want[c] < counts[c] && proportions[c] > 0.0 {
            want[c] += 1;
            short -= 1;
        }
    }
    if let Some(c) = (0..k).find(|&c| want[c] > counts[c]) {
        return Err(Error::InfeasibleScheme(format!(
            "class {c} needs {} samples but has {}",
            want[c], counts[c]
        )));
    }
    if short > 0 {
        return Err(Error::InfeasibleScheme(format!("cannot draw {size} samples")));
    }
    take_per_class(ds, &want, seed)
}

fn take_per_class(ds: &LabeledDataset, want: &[usize], seed: u64) -> Result<LabeledDataset> {
    let labels = ds.oracle_labels().expect("checked by callers");
    let mut keep = Vec::new();
    for (c, &w) in want.iter().enumerate() {
        let members: Vec<usize> = labels.iter().enumerate().filter(|(_, &y)| y == c).map(|(i, _)| i).collect();
        let mut r = rng::stream(seed, "subsample", c as u64);
        let perm = rng::permutation(members.len(), &mut r);
        keep.extend(perm[..w].iter().map(|&j| members[j]));
    }
    keep.sort_unstable();
    ds.subset(&keep)
}
