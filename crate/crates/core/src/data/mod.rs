//! Datasets, bag construction with class proportions, and synthetic data.
//!
//! The LLP protocol never shows instance labels to the learner, only per-bag
//! class proportions. That split is enforced structurally here: training code
//! works from [`LlpDataset::bags`] and [`LlpDataset::features`], while true
//! labels sit behind the explicitly named [`LabeledDataset::eval_labels`]
//! accessor that only evaluation code is supposed to touch.

mod io;
mod synthetic;

pub use io::{load_bag_partition, load_csv, save_bag_partition, save_csv};
pub use synthetic::{gaussian_blobs, two_moons};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance for proportion vectors summing to one.
const PROPORTION_TOL: f64 = 1e-9;

/// A fully labeled dataset: row-major features plus one class index per row.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(Error::ShapeMismatch {
                context: "features vs labels",
                expected: format!("{} labels", features.nrows()),
                got: format!("{} labels", labels.len()),
            });
        }
        if num_classes == 0 {
            return Err(Error::Domain("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("features must be finite".into()));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature dimension d.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Ground-truth labels, for evaluation only. Training code must not call
    /// this; it learns from bag proportions alone.
    pub fn eval_labels(&self) -> &[usize] {
        &self.labels
    }
}

/// A bag: a subset of instances with the class-mass fractions of its members.
#[derive(Debug, Clone)]
pub struct Bag {
    instance_indices: Vec<usize>,
    proportions: Array1<f64>,
}

impl Bag {
    pub fn new(instance_indices: Vec<usize>, proportions: Array1<f64>) -> Result<Self> {
        if instance_indices.is_empty() {
            return Err(Error::EmptyInput("bag instance list"));
        }
        if proportions.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidMeasure(
                "bag proportions must be nonnegative and finite".into(),
            ));
        }
        let sum: f64 = proportions.sum();
        if (sum - 1.0).abs() > PROPORTION_TOL {
            return Err(Error::InvalidMeasure(format!(
                "bag proportions sum to {sum}, expected 1"
            )));
        }
        Ok(Bag {
            instance_indices,
            proportions,
        })
    }

    pub fn size(&self) -> usize {
        self.instance_indices.len()
    }

    pub fn instance_indices(&self) -> &[usize] {
        &self.instance_indices
    }

    /// Class proportions p_i, length K, summing to one.
    pub fn proportions(&self) -> &Array1<f64> {
        &self.proportions
    }
}

/// A dataset partitioned into disjoint bags for LLP training.
///
/// The parent's labels are retained for evaluation but play no role in
/// training; instances outside every bag (a dropped remainder) are simply
/// never referenced.
#[derive(Debug, Clone)]
pub struct LlpDataset {
    parent: LabeledDataset,
    bags: Vec<Bag>,
}

impl LlpDataset {
    pub fn new(parent: LabeledDataset, bags: Vec<Bag>) -> Result<Self> {
        let mut seen = vec![false; parent.len()];
        for bag in &bags {
            if bag.proportions.len() != parent.num_classes {
                return Err(Error::ShapeMismatch {
                    context: "bag proportions vs num_classes",
                    expected: format!("{}", parent.num_classes),
                    got: format!("{}", bag.proportions.len()),
                });
            }
            for &idx in &bag.instance_indices {
                if idx >= parent.len() {
                    return Err(Error::Domain(format!(
                        "bag references instance {idx} outside dataset of size {}",
                        parent.len()
                    )));
                }
                if seen[idx] {
                    return Err(Error::Domain(format!(
                        "instance {idx} appears in more than one bag"
                    )));
                }
                seen[idx] = true;
            }
        }
        Ok(LlpDataset { parent, bags })
    }

    pub fn parent(&self) -> &LabeledDataset {
        &self.parent
    }

    pub fn features(&self) -> &Array2<f64> {
        self.parent.features()
    }

    pub fn num_classes(&self) -> usize {
        self.parent.num_classes()
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn num_bags(&self) -> usize {
        self.bags.len()
    }
}

/// Empirical class frequencies of a label list.
pub fn compute_proportions(labels: &[usize], num_classes: usize) -> Result<Array1<f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("label list for proportions"));
    }
    let mut counts = Array1::zeros(num_classes);
    for &y in labels {
        if y >= num_classes {
            return Err(Error::Domain(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        counts[y] += 1.0;
    }
    Ok(counts / labels.len() as f64)
}

/// Shuffles the dataset with a seeded generator, chunks it into consecutive
/// bags of exactly `bag_size`, and drops any trailing remainder. Proportions
/// are the exact empirical class frequencies of each bag.
pub fn make_bags(data: LabeledDataset, bag_size: usize, seed: u64) -> Result<LlpDataset> {
    if bag_size == 0 {
        return Err(Error::Domain("bag_size must be positive".into()));
    }
    if bag_size > data.len() {
        return Err(Error::Domain(format!(
            "bag_size {bag_size} exceeds dataset size {}",
            data.len()
        )));
    }
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let mut bags = Vec::with_capacity(data.len() / bag_size);
    for chunk in indices.chunks_exact(bag_size) {
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let proportions = compute_proportions(&labels, data.num_classes)?;
        bags.push(Bag::new(chunk.to_vec(), proportions)?);
    }
    LlpDataset::new(data, bags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn blob_data(n: usize, num_classes: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..num_classes)).collect();
        LabeledDataset::new(features, labels, num_classes).unwrap()
    }

    #[test]
    fn proportions_of_balanced_and_pure_lists() {
        let p = compute_proportions(&[0, 0, 1, 1], 2).unwrap();
        assert_eq!(p.as_slice().unwrap(), &[0.5, 0.5]);
        let p = compute_proportions(&[2, 2, 2], 3).unwrap();
        assert_eq!(p.as_slice().unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn proportions_match_independent_histogram() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let labels: Vec<usize> = (0..64).map(|_| rng.random_range(0..10)).collect();
        let p = compute_proportions(&labels, 10).unwrap();
        let mut hist = [0usize; 10];
        for &y in &labels {
            hist[y] += 1;
        }
        for k in 0..10 {
            assert_abs_diff_eq!(p[k], hist[k] as f64 / 64.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn proportions_reject_empty_and_out_of_range() {
        assert!(compute_proportions(&[], 2).is_err());
        assert!(compute_proportions(&[3], 2).is_err());
    }

    #[test]
    fn dataset_validates_labels_and_shapes() {
        let f = Array2::zeros((3, 2));
        assert!(LabeledDataset::new(f.clone(), vec![0, 1], 2).is_err());
        assert!(LabeledDataset::new(f.clone(), vec![0, 1, 2], 2).is_err());
        assert!(LabeledDataset::new(f.clone(), vec![0, 1, 0], 0).is_err());
        let mut bad = f.clone();
        bad[[0, 0]] = f64::NAN;
        assert!(LabeledDataset::new(bad, vec![0, 1, 0], 2).is_err());
        assert!(LabeledDataset::new(f, vec![0, 1, 0], 2).is_ok());
    }

    #[test]
    fn standard_bag_layout_covers_everything() {
        let llp = make_bags(blob_data(2000, 2, 1), 50, 42).unwrap();
        assert_eq!(llp.num_bags(), 40);
        assert!(llp.bags().iter().all(|b| b.size() == 50));
        let mut seen = vec![false; 2000];
        for bag in llp.bags() {
            for &i in bag.instance_indices() {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn single_bag_gets_global_frequencies() {
        let data = blob_data(100, 3, 2);
        let global = compute_proportions(data.eval_labels(), 3).unwrap();
        let llp = make_bags(data, 100, 9).unwrap();
        assert_eq!(llp.num_bags(), 1);
        for k in 0..3 {
            assert_abs_diff_eq!(llp.bags()[0].proportions()[k], global[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn remainder_is_dropped() {
        let llp = make_bags(blob_data(105, 2, 3), 50, 0).unwrap();
        assert_eq!(llp.num_bags(), 2);
        let covered: usize = llp.bags().iter().map(|b| b.size()).sum();
        assert_eq!(covered, 100);
    }

    #[test]
    fn bag_construction_rejects_bad_sizes() {
        assert!(make_bags(blob_data(10, 2, 4), 0, 0).is_err());
        assert!(make_bags(blob_data(10, 2, 4), 11, 0).is_err());
    }

    #[test]
    fn same_seed_reproduces_partition_different_seed_changes_it() {
        let a = make_bags(blob_data(200, 2, 5), 20, 7).unwrap();
        let b = make_bags(blob_data(200, 2, 5), 20, 7).unwrap();
        let c = make_bags(blob_data(200, 2, 5), 20, 8).unwrap();
        let flat = |llp: &LlpDataset| -> Vec<usize> {
            llp.bags()
                .iter()
                .flat_map(|b| b.instance_indices().iter().copied())
                .collect()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn llp_dataset_rejects_overlapping_bags() {
        let data = blob_data(6, 2, 6);
        let p = Array1::from(vec![0.5, 0.5]);
        let bags = vec![
            Bag::new(vec![0, 1], p.clone()).unwrap(),
            Bag::new(vec![1, 2], p).unwrap(),
        ];
        assert!(LlpDataset::new(data, bags).is_err());
    }

    proptest! {
        /// Bags from any (size, bag_size, seed) triple partition a prefix of
        /// the shuffled data: disjoint, full bags only, counts integral.
        #[test]
        fn bags_are_disjoint_with_integral_counts(
            n in 2usize..150,
            bag_div in 1usize..10,
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let bag_size = (n / bag_div).max(1);
            let llp = make_bags(blob_data(n, k, seed), bag_size, seed).unwrap();
            prop_assert_eq!(llp.num_bags(), n / bag_size);
            let mut seen = vec![false; n];
            for bag in llp.bags() {
                prop_assert_eq!(bag.size(), bag_size);
                for &i in bag.instance_indices() {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
                for &p in bag.proportions() {
                    let count = p * bag_size as f64;
                    prop_assert!((count - count.round()).abs() < 1e-9);
                }
            }
        }
    }
}
