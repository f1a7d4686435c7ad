//! Synthetic dataset generators for desk-scale experiments.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// `count` evenly spaced values from 0 to π inclusive.
fn half_circle_angles(count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|j| std::f64::consts::PI * j as f64 / (count - 1) as f64)
        .collect()
}

/// Two interleaving half-circles with isotropic Gaussian noise.
///
/// Class 0 lies on the upper unit half-circle at the origin; class 1 on a
/// lower half-circle shifted right and down so the arcs interlock. Classes
/// are balanced (⌈n/2⌉ vs ⌊n/2⌋) and the point order is class 0 first.
pub fn two_moons(n: usize, noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if n < 2 {
        return Err(Error::Domain(format!("two_moons needs n >= 2, got {n}")));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Domain(format!(
            "noise_std must be finite and nonnegative, got {noise_std}"
        )));
    }
    let n0 = n.div_ceil(2);
    let n1 = n / 2;
    let mut features = Array2::zeros((n, 2));
    for (row, t) in half_circle_angles(n0).into_iter().enumerate() {
        features[[row, 0]] = t.cos();
        features[[row, 1]] = t.sin();
    }
    for (offset, t) in half_circle_angles(n1).into_iter().enumerate() {
        let row = n0 + offset;
        features[[row, 0]] = 1.0 - t.cos();
        features[[row, 1]] = 1.0 - t.sin() - 0.5;
    }
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_std).expect("validated std");
        for x in features.iter_mut() {
            *x += normal.sample(&mut rng);
        }
    }
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n0)).collect();
    LabeledDataset::new(features, labels, 2)
}

/// Isotropic Gaussian clusters, one class per center, assigned round-robin
/// so classes stay balanced up to one point.
pub fn gaussian_blobs(
    n: usize,
    centers: &[Vec<f64>],
    noise_std: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if centers.is_empty() {
        return Err(Error::EmptyInput("blob centers"));
    }
    if n < centers.len() {
        return Err(Error::Domain(format!(
            "need at least one point per center: n={n} < {} centers",
            centers.len()
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Domain(format!(
            "noise_std must be finite and nonnegative, got {noise_std}"
        )));
    }
    let dim = centers[0].len();
    if dim == 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(Error::Domain(
            "all blob centers must share a positive dimension".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("validated std");
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % centers.len();
        labels.push(k);
        for (j, &c) in centers[k].iter().enumerate() {
            features[[i, j]] = c + if noise_std > 0.0 { normal.sample(&mut rng) } else { 0.0 };
        }
    }
    LabeledDataset::new(features, labels, centers.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn noiseless_moons_lie_on_their_arcs() {
        let data = two_moons(2000, 0.0, 0).unwrap();
        let f = data.features();
        for i in 0..1000 {
            let r = (f[[i, 0]].powi(2) + f[[i, 1]].powi(2)).sqrt();
            assert_abs_diff_eq!(r, 1.0, epsilon = 1e-9);
            assert!(f[[i, 1]] >= -1e-9, "class 0 stays in the upper half");
        }
        for i in 1000..2000 {
            let (dx, dy) = (f[[i, 0]] - 1.0, f[[i, 1]] - 0.5);
            let r = (dx * dx + dy * dy).sqrt();
            assert_abs_diff_eq!(r, 1.0, epsilon = 1e-9);
            assert!(f[[i, 1]] <= 0.5 + 1e-9, "class 1 stays in the lower half");
        }
    }

    #[test]
    fn moons_are_balanced_even_and_odd() {
        let data = two_moons(2000, 0.1, 1).unwrap();
        let ones = data.eval_labels().iter().filter(|&&y| y == 1).count();
        assert_eq!(ones, 1000);
        let data = two_moons(7, 0.1, 1).unwrap();
        let zeros = data.eval_labels().iter().filter(|&&y| y == 0).count();
        assert_eq!((zeros, data.len() - zeros), (4, 3));
    }

    #[test]
    fn moons_are_seed_deterministic() {
        let a = two_moons(64, 0.2, 5).unwrap();
        let b = two_moons(64, 0.2, 5).unwrap();
        assert_eq!(a.features(), b.features());
        let c = two_moons(64, 0.2, 6).unwrap();
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn moons_reject_degenerate_requests() {
        assert!(two_moons(1, 0.1, 0).is_err());
        assert!(two_moons(10, -0.1, 0).is_err());
        assert!(two_moons(10, f64::NAN, 0).is_err());
        assert!(two_moons(2, 0.0, 0).is_ok());
    }

    #[test]
    fn blobs_cluster_near_their_centers() {
        let centers = vec![vec![0.0, 0.0], vec![10.0, 10.0]];
        let data = gaussian_blobs(100, &centers, 0.5, 3).unwrap();
        assert_eq!(data.num_classes(), 2);
        for i in 0..100 {
            let y = data.eval_labels()[i];
            let c = &centers[y];
            let d: f64 = (0..2)
                .map(|j| (data.features()[[i, j]] - c[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(d < 5.0, "point {i} strayed {d} from its center");
        }
    }

    #[test]
    fn blobs_validate_center_shapes() {
        assert!(gaussian_blobs(10, &[], 0.1, 0).is_err());
        assert!(gaussian_blobs(1, &[vec![0.0], vec![1.0]], 0.1, 0).is_err());
        assert!(gaussian_blobs(10, &[vec![0.0], vec![1.0, 2.0]], 0.1, 0).is_err());
    }
}
