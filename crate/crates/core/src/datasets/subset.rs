use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::seed;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetSize {
    Count(usize),
    /// Fraction of the dataset in `(0, 1]`, rounded to the nearest count.
    Fraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetSpec {
    pub size: SubsetSize,
    pub stratified: bool,
    pub seed: u64,
}

impl SubsetSize {
    pub fn resolve(self, total: usize) -> Result<usize> {
        let n = match self {
            SubsetSize::Count(n) => n,
            SubsetSize::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::invalid(format!("subset fraction {f} outside (0, 1]")));
                }
                ((f * total as f64).round() as usize).max(1)
            }
        };
        if n == 0 {
            return Err(Error::invalid("subset size must be positive"));
        }
        if n > total {
            return Err(Error::invalid(format!("subset of {n} from {total} samples")));
        }
        Ok(n)
    }
}

/// A seeded ordering of the whole dataset whose prefixes are the subsets:
/// every prefix of a larger subset is the smaller subset for the same seed.
///
/// Stratified orders deal one sample per class per round (class order
/// reshuffled every round), so any prefix has per-class counts within one
/// of each other while every class still has samples left.
pub fn nested_order(ds: &DomainDataset, stratified: bool, seed: u64) -> Vec<usize> {
    let mut rng = seed::derived_rng(seed, "subset", 0);
    if !stratified {
        let mut all: Vec<usize> = (0..ds.len()).collect();
        all.shuffle(&mut rng);
        return all;
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, y) in ds.labels().iter().enumerate() {
        by_class[*y as usize].push(i);
    }
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
    }
    let rounds = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut classes: Vec<usize> = (0..by_class.len()).collect();
    let mut order = Vec::with_capacity(ds.len());
    for r in 0..rounds {
        classes.shuffle(&mut rng);
        for &c in &classes {
            if let Some(&i) = by_class[c].get(r) {
                order.push(i);
            }
        }
    }
    order
}

/// The first `count` samples of the seeded nested order.
pub fn stratified_subset(ds: &DomainDataset, spec: &SubsetSpec) -> Result<DomainDataset> {
    let n = spec.size.resolve(ds.len())?;
    if spec.stratified {
        let present = ds.class_counts().iter().filter(|c| **c > 0).count();
        if n < present {
            return Err(Error::invalid(format!(
                "stratified subset of {n} cannot cover {present} classes"
            )));
        }
    }
    let order = nested_order(ds, spec.stratified, spec.seed);
    Ok(ds.select(&order[..n]).with_seed(Some(spec.seed)))
}

/// Stratified split with `round(train_fraction · N_c)` samples of every
/// class `c` going to train. Both parts keep the original sample order.
pub fn train_test_split(
    ds: &DomainDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train fraction must lie in (0, 1)"));
    }
    let mut rng = seed::derived_rng(seed, "train-test", 0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, y) in ds.labels().iter().enumerate() {
        by_class[*y as usize].push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        let k = (train_fraction * members.len() as f64).round() as usize;
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let mut tr = ds.select(&train);
    tr.split = super::Split::Train;
    let mut te = ds.select(&test);
    te.split = super::Split::Test;
    Ok((tr, te))
}

/// `k` strictly increasing, geometrically spaced sizes from `n_min` to
/// `n_max` inclusive. Interior points are rounded up; collisions are pushed
/// apart so the result stays strictly increasing.
pub fn log_spaced_sizes(n_min: usize, n_max: usize, k: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("need at least two sizes"));
    }
    if n_min < 1 || n_min >= n_max {
        return Err(Error::invalid(format!("need 1 <= n_min < n_max, got {n_min}, {n_max}")));
    }
    if n_max - n_min + 1 < k {
        return Err(Error::invalid(format!(
            "cannot fit {k} distinct sizes in [{n_min}, {n_max}]"
        )));
    }
    let (lo, hi) = (n_min as f64, n_max as f64);
    let mut sizes: Vec<usize> = (0..k)
        .map(|i| {
            if i == 0 {
                return n_min;
            }
            if i == k - 1 {
                return n_max;
            }
            let v = lo * (hi / lo).powf(i as f64 / (k - 1) as f64);
            let near = v.round();
            // Values within rounding noise of an integer are that integer.
            if (v - near).abs() <= 1e-9 * v {
                near as usize
            } else {
                v.ceil() as usize
            }
        })
        .collect();
    for i in 1..k {
        sizes[i] = sizes[i].max(sizes[i - 1] + 1);
    }
    sizes[k - 1] = n_max;
    for i in (0..k - 1).rev() {
        sizes[i] = sizes[i].min(sizes[i + 1] - 1);
    }
    Ok(sizes)
}
