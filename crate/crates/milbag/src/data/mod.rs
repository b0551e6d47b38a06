//! Weakly-labelled bag data: in-memory types, the on-disk archive format,
//! the synthetic generator, stratified splitting, and batch samplers.

pub mod archive;
pub mod sampler;
pub mod split;
pub mod synthetic;

use thiserror::Error;

use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bag {id}: label has {got} classes, dataset has {expected}")]
    LabelLength { id: String, expected: usize, got: usize },
    #[error("bag {id}: instances have {got} features, dataset has {expected}")]
    FeatureDim { id: String, expected: usize, got: usize },
    #[error("classes with no bags: {0:?}")]
    EmptyClasses(Vec<usize>),
    #[error("split fractions {0} + {1} must be non-negative and sum to 1")]
    BadFractions(f64, f64),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
}

/// One supervision unit: `L x M` instance features plus a multi-hot label
/// over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    pub instances: Matrix,
    pub label: Vec<bool>,
}

impl Bag {
    pub fn num_instances(&self) -> usize {
        self.instances.rows()
    }

    pub fn positive_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.label.iter().enumerate().filter(|(_, &set)| set).map(|(k, _)| k)
    }
}

/// An ordered collection of bags sharing a feature dimension and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    bags: Vec<Bag>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    /// An empty dataset still carries its dimensions so archives with N=0
    /// round-trip.
    pub fn empty(num_classes: usize, feature_dim: usize) -> Self {
        Dataset { bags: Vec::new(), num_classes, feature_dim }
    }

    pub fn new(num_classes: usize, feature_dim: usize, bags: Vec<Bag>) -> Result<Self, DataError> {
        for bag in &bags {
            if bag.label.len() != num_classes {
                return Err(DataError::LabelLength {
                    id: bag.id.clone(),
                    expected: num_classes,
                    got: bag.label.len(),
                });
            }
            if bag.instances.cols() != feature_dim {
                return Err(DataError::FeatureDim {
                    id: bag.id.clone(),
                    expected: feature_dim,
                    got: bag.instances.cols(),
                });
            }
        }
        Ok(Dataset { bags, num_classes, feature_dim })
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Bags positive for each class, by index. A multi-label bag appears
    /// under every class it is positive for.
    pub fn class_index_lists(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.num_classes];
        for (i, bag) in self.bags.iter().enumerate() {
            for k in bag.positive_classes() {
                lists[k].push(i);
            }
        }
        lists
    }

    /// Number of positive bags per class.
    pub fn class_counts(&self) -> Vec<usize> {
        self.class_index_lists().iter().map(Vec::len).collect()
    }
}
