//! Mixup augmentation: convex combinations of instance pairs and their soft
//! labels.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

/// Deterministic core: x = λ·x₁ + (1−λ)·x₂ and likewise for labels.
/// Exposed separately so the endpoint cases (λ ∈ {0, 1}) are testable
/// without fighting the Beta sampler.
pub fn mix_with_lambda(
    x1: &Array2<f64>,
    y1: &Array2<f64>,
    x2: &Array2<f64>,
    y2: &Array2<f64>,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if x1.dim() != x2.dim() || y1.dim() != y2.dim() || x1.nrows() != y1.nrows() {
        return Err(Error::ShapeMismatch {
            context: "mixup pair batches",
            expected: format!("{:?} features / {:?} labels", x1.dim(), y1.dim()),
            got: format!("{:?} features / {:?} labels", x2.dim(), y2.dim()),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!(
            "mixup lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let x = lambda * x1 + (1.0 - lambda) * x2;
    let y = lambda * y1 + (1.0 - lambda) * y2;
    Ok((x, y))
}

/// Mixes every instance with a seeded random partner from the same batch,
/// drawing λ per pair from Beta(alpha, alpha). Returns the mixed batch,
/// same size as the input.
pub fn mixup(
    x: &Array2<f64>,
    y: &Array2<f64>,
    alpha: f64,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if x.nrows() != y.nrows() {
        return Err(Error::ShapeMismatch {
            context: "mixup features vs labels",
            expected: format!("{} rows", x.nrows()),
            got: format!("{} rows", y.nrows()),
        });
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!(
            "mixup alpha must be positive and finite, got {alpha}"
        )));
    }
    let n = x.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = Beta::new(alpha, alpha).expect("validated alpha");

    let mut mixed_x = Array2::zeros(x.dim());
    let mut mixed_y = Array2::zeros(y.dim());
    for i in 0..n {
        let partner = rng.random_range(0..n);
        let lambda = beta.sample(&mut rng);
        for j in 0..x.ncols() {
            mixed_x[[i, j]] = lambda * x[[i, j]] + (1.0 - lambda) * x[[partner, j]];
        }
        for k in 0..y.ncols() {
            mixed_y[[i, k]] = lambda * y[[i, k]] + (1.0 - lambda) * y[[partner, k]];
        }
    }
    Ok((mixed_x, mixed_y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn batches() -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
        (
            array![[1.0, 2.0], [3.0, 4.0]],
            array![[1.0, 0.0], [0.0, 1.0]],
            array![[5.0, 6.0], [7.0, 8.0]],
            array![[0.0, 1.0], [1.0, 0.0]],
        )
    }

    #[test]
    fn endpoint_lambdas_return_originals_exactly() {
        let (x1, y1, x2, y2) = batches();
        let (x, y) = mix_with_lambda(&x1, &y1, &x2, &y2, 1.0).unwrap();
        assert_eq!(x, x1);
        assert_eq!(y, y1);
        let (x, y) = mix_with_lambda(&x1, &y1, &x2, &y2, 0.0).unwrap();
        assert_eq!(x, x2);
        assert_eq!(y, y2);
    }

    #[test]
    fn half_lambda_is_the_midpoint() {
        let (x1, y1, x2, y2) = batches();
        let (x, y) = mix_with_lambda(&x1, &y1, &x2, &y2, 0.5).unwrap();
        assert_eq!(x, array![[3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(y, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn mixed_label_rows_still_sum_to_one() {
        let (x1, y1, _, _) = batches();
        let (_, y) = mixup(&x1, &y1, 1.0, 3).unwrap();
        for row in y.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mixup_is_seed_deterministic() {
        let (x1, y1, _, _) = batches();
        let a = mixup(&x1, &y1, 0.4, 9).unwrap();
        let b = mixup(&x1, &y1, 0.4, 9).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn shape_and_alpha_validation() {
        let (x1, y1, _, y2) = batches();
        let wide = Array2::<f64>::zeros((3, 2));
        assert!(mixup(&wide, &y1, 1.0, 0).is_err());
        assert!(mixup(&x1, &y1, 0.0, 0).is_err());
        assert!(mix_with_lambda(&x1, &y1, &wide, &y2, 0.5).is_err());
        assert!(mix_with_lambda(&x1, &y1, &x1, &y1, 1.5).is_err());
    }
}
