//! Synthetic weakly-labelled dataset generator.
//!
//! Each class gets a cluster center at distance `separation` from the
//! origin along a random direction. A bag positive for class k carries a
//! small number of instances drawn around that center; everything else is
//! background noise around the origin with the same per-dimension spread.
//! The bag label never marks a class without at least one in-cluster
//! instance, which is exactly the assumption the pooling strategies are
//! meant to exploit.
//!
//! Noise is a two-component Gaussian scale mixture: each instance's noise
//! vector is drawn at `noise_std`, or at [`OUTLIER_SCALE`] times that with
//! probability [`OUTLIER_PROB`]. The occasional burst instance mimics loud
//! non-target events in real weakly-labelled audio; a mean-style pooling
//! shrugs them off while a per-bag maximum chases them.

use serde::{Deserialize, Serialize};

use super::{Bag, DataError, Dataset};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Fraction of instances whose noise is drawn at the outlier scale.
pub const OUTLIER_PROB: f64 = 0.05;
/// Noise scale multiplier for outlier instances.
pub const OUTLIER_SCALE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub instances_per_bag: usize,
    /// Positive bags generated per class.
    pub bags_per_class: Vec<usize>,
    /// Inclusive range of in-cluster instances in a positive bag.
    pub positives_min: usize,
    pub positives_max: usize,
    /// Distance of every cluster center from the origin.
    pub separation: f64,
    /// Per-dimension standard deviation of both background and in-cluster noise.
    pub noise_std: f64,
    /// Chance that a positive bag also carries a second class (making the
    /// label multi-hot and the bag eligible for both sampler queues).
    pub extra_label_prob: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Uniform class sizes.
    pub fn uniform(num_classes: usize, bags_per_class: usize) -> Self {
        SyntheticSpec {
            num_classes,
            feature_dim: 16,
            instances_per_bag: 10,
            bags_per_class: vec![bags_per_class; num_classes],
            positives_min: 1,
            positives_max: 2,
            separation: 3.0,
            noise_std: 1.0,
            extra_label_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let err = |msg: String| Err(DataError::BadSpec(msg));
        if self.num_classes == 0 || self.feature_dim == 0 || self.instances_per_bag == 0 {
            return err("num_classes, feature_dim and instances_per_bag must be at least 1".into());
        }
        if self.bags_per_class.len() != self.num_classes {
            return err(format!(
                "bags_per_class has {} entries for {} classes",
                self.bags_per_class.len(),
                self.num_classes
            ));
        }
        if self.positives_min < 1 || self.positives_min > self.positives_max {
            return err(format!(
                "positive count range [{}, {}] is not a sub-range of [1, L]",
                self.positives_min, self.positives_max
            ));
        }
        if self.positives_max > self.instances_per_bag {
            return err(format!(
                "up to {} positive instances cannot fit in bags of {}",
                self.positives_max, self.instances_per_bag
            ));
        }
        if self.extra_label_prob > 0.0 && 2 * self.positives_max > self.instances_per_bag {
            return err(format!(
                "two positive classes with up to {} instances each cannot fit in bags of {}",
                self.positives_max, self.instances_per_bag
            ));
        }
        if !(0.0..=1.0).contains(&self.extra_label_prob) {
            return err(format!("extra_label_prob {} outside [0, 1]", self.extra_label_prob));
        }
        if self.separation < 0.0 || self.noise_std < 0.0 {
            return err("separation and noise_std must be non-negative".into());
        }
        Ok(())
    }
}

/// The cluster centers a spec generates, one row per class. Exposed so
/// evaluation oracles can score generated data against the true centers.
pub fn class_centers(spec: &SyntheticSpec) -> Result<Matrix, DataError> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed).split("synthetic/centers");
    let mut centers = Matrix::zeros(spec.num_classes, spec.feature_dim);
    for k in 0..spec.num_classes {
        let direction = rng.normal(1, spec.feature_dim, 0.0, 1.0);
        let norm = direction.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let row = centers.row_mut(k);
        if norm < 1e-12 {
            row[0] = spec.separation;
        } else {
            for (c, &d) in row.iter_mut().zip(direction.data()) {
                *c = spec.separation * d / norm;
            }
        }
    }
    Ok(centers)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let centers = class_centers(spec)?;
    let mut rng = Rng::new(spec.seed).split("synthetic/bags");
    let (l, m, k) = (spec.instances_per_bag, spec.feature_dim, spec.num_classes);

    // Instance noise at the base scale, or the outlier scale for a small
    // fraction of instances. Shared by background and in-cluster draws, so
    // zero separation really does erase all signal.
    let mut noise_row = |rng: &mut Rng| -> Matrix {
        let scale = if rng.next_f64() < OUTLIER_PROB {
            OUTLIER_SCALE * spec.noise_std
        } else {
            spec.noise_std
        };
        rng.normal(1, m, 0.0, scale)
    };

    let mut bags = Vec::new();
    for class in 0..k {
        for n in 0..spec.bags_per_class[class] {
            let mut label = vec![false; k];
            label[class] = true;
            let mut positive_classes = vec![class];
            if k > 1 && spec.extra_label_prob > 0.0 && rng.next_f64() < spec.extra_label_prob {
                let mut other = rng.next_index(k - 1);
                if other >= class {
                    other += 1;
                }
                label[other] = true;
                positive_classes.push(other);
            }

            let mut instances = Matrix::zeros(l, m);
            for slot in 0..l {
                let noise = noise_row(&mut rng);
                instances.row_mut(slot).copy_from_slice(noise.row(0));
            }
            let mut slots: Vec<usize> = (0..l).collect();
            rng.shuffle(&mut slots);
            let mut next_slot = 0;
            for &pos_class in &positive_classes {
                let span = spec.positives_max - spec.positives_min + 1;
                let count = spec.positives_min + rng.next_index(span);
                for _ in 0..count {
                    let slot = slots[next_slot];
                    next_slot += 1;
                    let noise = noise_row(&mut rng);
                    let row = instances.row_mut(slot);
                    for ((x, &c), &e) in row.iter_mut().zip(centers.row(pos_class)).zip(noise.data()) {
                        *x = c + e;
                    }
                }
            }

            // Features carry f32 precision, matching the archive payload,
            // so write/read round-trips are exact.
            let instances = instances.map(|v| (v as f32) as f64);
            bags.push(Bag { id: format!("syn-{class}-{n}"), instances, label });
        }
    }
    Dataset::new(k, m, bags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;

    /// Bag score for a class: negated distance of the nearest instance to
    /// the true cluster center. Knows the generator's centers, nothing else.
    fn centroid_oracle_score(bag: &Bag, center: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for r in 0..bag.num_instances() {
            let d: f64 = bag
                .instances
                .row(r)
                .iter()
                .zip(center)
                .map(|(x, c)| (x - c) * (x - c))
                .sum();
            best = best.min(d);
        }
        -best.sqrt()
    }

    fn oracle_auc(spec: &SyntheticSpec) -> f64 {
        let ds = generate_synthetic(spec).unwrap();
        let centers = class_centers(spec).unwrap();
        let mut total = 0.0;
        for k in 0..spec.num_classes {
            let scores: Vec<f64> =
                ds.bags().iter().map(|b| centroid_oracle_score(b, centers.row(k))).collect();
            let labels: Vec<bool> = ds.bags().iter().map(|b| b.label[k]).collect();
            total += auc(&scores, &labels).unwrap();
        }
        total / spec.num_classes as f64
    }

    #[test]
    fn construction_counts_and_mil_contract() {
        let mut spec = SyntheticSpec::uniform(2, 10);
        spec.feature_dim = 6;
        spec.noise_std = 0.0;
        spec.separation = 5.0;
        spec.seed = 3;
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.len(), 20);
        let centers = class_centers(&spec).unwrap();
        for bag in ds.bags() {
            for k in bag.positive_classes() {
                // With zero noise a positive instance sits exactly on the
                // (f32-quantized) center.
                let hit = (0..bag.num_instances()).any(|r| {
                    bag.instances
                        .row(r)
                        .iter()
                        .zip(centers.row(k))
                        .all(|(x, c)| (x - (*c as f32) as f64).abs() == 0.0)
                });
                assert!(hit, "bag {} has no in-cluster instance for class {k}", bag.id);
            }
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = SyntheticSpec::uniform(3, 15);
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 1;
        assert_ne!(generate_synthetic(&spec).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn zero_separation_has_no_signal() {
        let mut spec = SyntheticSpec::uniform(2, 100);
        spec.separation = 0.0;
        spec.seed = 11;
        let a = oracle_auc(&spec);
        assert!((0.4..=0.6).contains(&a), "auc {a}");
    }

    #[test]
    fn wide_separation_is_separable() {
        let mut spec = SyntheticSpec::uniform(2, 100);
        spec.separation = 10.0;
        spec.noise_std = 1.0;
        spec.feature_dim = 16;
        spec.seed = 12;
        let a = oracle_auc(&spec);
        assert!(a > 0.95, "auc {a}");
    }

    #[test]
    fn infeasible_spec_rejected() {
        let mut spec = SyntheticSpec::uniform(2, 5);
        spec.positives_min = 4;
        spec.positives_max = 11;
        assert!(matches!(generate_synthetic(&spec), Err(DataError::BadSpec(_))));
        let mut spec = SyntheticSpec::uniform(2, 5);
        spec.bags_per_class = vec![5];
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn extra_labels_are_multi_hot_with_instances() {
        let mut spec = SyntheticSpec::uniform(4, 30);
        spec.extra_label_prob = 0.5;
        spec.noise_std = 0.0;
        spec.separation = 4.0;
        spec.seed = 21;
        let ds = generate_synthetic(&spec).unwrap();
        let multi = ds.bags().iter().filter(|b| b.positive_classes().count() > 1).count();
        assert!(multi > 10, "expected some multi-label bags, got {multi}");
        let centers = class_centers(&spec).unwrap();
        for bag in ds.bags() {
            for k in bag.positive_classes() {
                let hit = (0..bag.num_instances()).any(|r| {
                    bag.instances
                        .row(r)
                        .iter()
                        .zip(centers.row(k))
                        .all(|(x, c)| (x - (*c as f32) as f64).abs() == 0.0)
                });
                assert!(hit);
            }
        }
    }
}
