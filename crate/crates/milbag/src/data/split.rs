//! Stratified train/eval splitting.

use super::{DataError, Dataset};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct SplitReport {
    pub train: Dataset,
    pub eval: Dataset,
    /// Classes whose single bag was forced into the train split.
    pub singleton_classes: Vec<usize>,
}

/// Splits a dataset into disjoint, covering train and eval sets.
///
/// Bags are stratified by their lowest positive class (unlabelled bags form
/// their own stratum), each stratum is shuffled with the seed, and the eval
/// share is rounded per stratum. When both fractions are positive, a stratum
/// with at least two bags lands on both sides; a single-bag stratum goes to
/// train and its class is reported.
pub fn split(ds: &Dataset, fractions: (f64, f64), seed: u64) -> Result<SplitReport, DataError> {
    let (train_frac, eval_frac) = fractions;
    if train_frac < 0.0 || eval_frac < 0.0 || (train_frac + eval_frac - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions(train_frac, eval_frac));
    }

    let num_strata = ds.num_classes() + 1;
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); num_strata];
    for (i, bag) in ds.bags().iter().enumerate() {
        match bag.positive_classes().next() {
            Some(k) => strata[k].push(i),
            None => strata[ds.num_classes()].push(i),
        }
    }

    let mut rng = Rng::new(seed).split("split");
    let mut eval_indices = Vec::new();
    let mut singleton_classes = Vec::new();
    for (stratum, indices) in strata.iter_mut().enumerate() {
        if indices.is_empty() {
            continue;
        }
        rng.shuffle(indices);
        let n = indices.len();
        let mut eval_count = (eval_frac * n as f64).round() as usize;
        if eval_frac > 0.0 && train_frac > 0.0 {
            if n == 1 {
                eval_count = 0;
                if stratum < ds.num_classes() {
                    singleton_classes.push(stratum);
                }
            } else {
                eval_count = eval_count.clamp(1, n - 1);
            }
        }
        eval_indices.extend_from_slice(&indices[..eval_count]);
    }

    let mut in_eval = vec![false; ds.len()];
    for &i in &eval_indices {
        in_eval[i] = true;
    }
    let mut train_bags = Vec::new();
    let mut eval_bags = Vec::new();
    for (i, bag) in ds.bags().iter().enumerate() {
        if in_eval[i] {
            eval_bags.push(bag.clone());
        } else {
            train_bags.push(bag.clone());
        }
    }

    let train = if train_bags.is_empty() {
        Dataset::empty(ds.num_classes(), ds.feature_dim())
    } else {
        Dataset::new(ds.num_classes(), ds.feature_dim(), train_bags)?
    };
    let eval = if eval_bags.is_empty() {
        Dataset::empty(ds.num_classes(), ds.feature_dim())
    } else {
        Dataset::new(ds.num_classes(), ds.feature_dim(), eval_bags)?
    };
    Ok(SplitReport { train, eval, singleton_classes })
}
