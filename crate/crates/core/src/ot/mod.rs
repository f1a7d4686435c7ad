//! Discrete optimal transport: exact LP solver, entropic Sinkhorn solver,
//! coupling validation, entropy and p-Wasserstein distance.

mod exhaustive;
mod simplex;
mod sinkhorn;

pub use exhaustive::enumerate_exact_ot;
pub use simplex::exact_ot;
pub use sinkhorn::{sinkhorn, SinkhornResult};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Tolerance for "weights sum to one" checks on measures.
pub const MEASURE_TOL: f64 = 1e-9;

/// Default tolerance for coupling marginal checks.
pub const COUPLING_TOL: f64 = 1e-6;

/// Maximum number of cells (`n * m`) the exact solver accepts.
pub const EXACT_OT_CAP: usize = 4096;

/// A probability distribution on a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    weights: Array1<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure, rejecting negative weights and totals away from 1.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let weights = Array1::from_vec(weights);
        if weights.is_empty() {
            return Err(Error::EmptyInput("measure weights"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "weight {w} is negative or non-finite"
            )));
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > MEASURE_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, expected 1 within {MEASURE_TOL:e}"
            )));
        }
        Ok(Self { weights })
    }

    /// Uniform measure on `n` points.
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: Array1::from_elem(n, 1.0 / n as f64),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    /// Discrete entropy −Σ wᵢ ln wᵢ with the 0·ln 0 = 0 convention.
    pub fn entropy(&self) -> f64 {
        self.weights
            .iter()
            .filter(|w| **w > 0.0)
            .map(|w| -w * w.ln())
            .sum()
    }
}

/// A dense transport cost matrix. Entries must be finite; negative costs are
/// allowed (clamped −log probabilities can take any finite value).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
}

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !e.is_finite()) {
            return Err(Error::Domain(format!("cost matrix entry {e} is not finite")));
        }
        Ok(Self { entries })
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// A transport plan together with the marginals it is supposed to match.
///
/// Construction only checks shapes; whether the entries actually satisfy the
/// marginal constraints is the job of [`validate_coupling`], so that candidate
/// (possibly infeasible) plans can be represented and then checked.
#[derive(Debug, Clone)]
pub struct Coupling {
    entries: Array2<f64>,
    row_marginal: DiscreteMeasure,
    col_marginal: DiscreteMeasure,
}

impl Coupling {
    pub fn new(
        entries: Array2<f64>,
        row_marginal: DiscreteMeasure,
        col_marginal: DiscreteMeasure,
    ) -> Result<Self> {
        if entries.nrows() != row_marginal.len() || entries.ncols() != col_marginal.len() {
            return Err(Error::ShapeMismatch {
                context: "coupling vs marginals",
                expected: format!("{}x{}", row_marginal.len(), col_marginal.len()),
                got: format!("{}x{}", entries.nrows(), entries.ncols()),
            });
        }
        Ok(Self {
            entries,
            row_marginal,
            col_marginal,
        })
    }

    /// The independence coupling a·bᵀ.
    pub fn product(row_marginal: DiscreteMeasure, col_marginal: DiscreteMeasure) -> Self {
        let n = row_marginal.len();
        let m = col_marginal.len();
        let entries = Array2::from_shape_fn((n, m), |(i, j)| {
            row_marginal.weights()[i] * col_marginal.weights()[j]
        });
        Self {
            entries,
            row_marginal,
            col_marginal,
        }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn row_marginal(&self) -> &DiscreteMeasure {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &DiscreteMeasure {
        &self.col_marginal
    }

    /// Largest absolute violation across both marginal constraints.
    pub fn marginal_violation(&self) -> f64 {
        let row_sums = self.entries.sum_axis(ndarray::Axis(1));
        let col_sums = self.entries.sum_axis(ndarray::Axis(0));
        let row_err = row_sums
            .iter()
            .zip(self.row_marginal.weights())
            .map(|(s, a)| (s - a).abs())
            .fold(0.0, f64::max);
        let col_err = col_sums
            .iter()
            .zip(self.col_marginal.weights())
            .map(|(s, b)| (s - b).abs())
            .fold(0.0, f64::max);
        row_err.max(col_err)
    }
}

/// True iff the plan is entrywise nonnegative and both marginals hold within `tol`.
pub fn validate_coupling(q: &Coupling, tol: f64) -> bool {
    q.entries.iter().all(|e| *e >= 0.0) && q.marginal_violation() <= tol
}

/// Frobenius dot product ⟨Q, C⟩ = Σᵢⱼ Qᵢⱼ Cᵢⱼ.
pub fn transport_cost(q: &Coupling, c: &CostMatrix) -> Result<f64> {
    if q.entries.dim() != c.entries.dim() {
        return Err(Error::ShapeMismatch {
            context: "coupling vs cost matrix",
            expected: format!("{}x{}", q.entries.nrows(), q.entries.ncols()),
            got: format!("{}x{}", c.nrows(), c.ncols()),
        });
    }
    Ok(q.entries
        .iter()
        .zip(c.entries.iter())
        .map(|(q, c)| q * c)
        .sum())
}

/// Discrete entropy H(Q) = −Σᵢⱼ Qᵢⱼ ln Qᵢⱼ, with 0·ln 0 = 0.
pub fn entropy(q: &Coupling) -> Result<f64> {
    if let Some(e) = q.entries.iter().find(|e| **e < 0.0) {
        return Err(Error::Domain(format!(
            "entropy undefined for negative entry {e}"
        )));
    }
    Ok(q.entries
        .iter()
        .filter(|e| **e > 0.0)
        .map(|e| -e * e.ln())
        .sum())
}

/// p-Wasserstein distance `(exact OT cost under D^p)^{1/p}` for a metric
/// matrix `D` on a common support.
pub fn wasserstein_p(
    d: &CostMatrix,
    p: f64,
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
) -> Result<f64> {
    if p < 1.0 {
        return Err(Error::Domain(format!("wasserstein order p = {p} must be >= 1")));
    }
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::Domain(format!(
            "metric matrix must be square, got {}x{}",
            d.nrows(),
            d.ncols()
        )));
    }
    if a.len() != n || b.len() != n {
        return Err(Error::ShapeMismatch {
            context: "measures vs metric matrix",
            expected: format!("{n}"),
            got: format!("{} and {}", a.len(), b.len()),
        });
    }
    for i in 0..n {
        if d.entries[[i, i]].abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "metric matrix diagonal entry D[{i},{i}] = {} is not zero",
                d.entries[[i, i]]
            )));
        }
        for j in 0..n {
            let e = d.entries[[i, j]];
            if e < 0.0 {
                return Err(Error::Domain(format!(
                    "metric matrix entry D[{i},{j}] = {e} is negative"
                )));
            }
            if (e - d.entries[[j, i]]).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "metric matrix is asymmetric at ({i},{j})"
                )));
            }
        }
    }
    let powered = CostMatrix::new(d.entries.mapv(|e| e.powf(p)))?;
    let (_, cost) = exact_ot(&powered, a, b)?;
    // tiny negative cost can appear from float rounding when a == b
    Ok(cost.max(0.0).powf(1.0 / p))
}

/// Configuration for the entropic (Sinkhorn) solver. `lambda` is the inverse
/// regularization strength 1/ε of the entropic term.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub log_domain: bool,
}

impl SinkhornConfig {
    /// Plain scaling underflows once exp(−λC) leaves the f64 range, so the
    /// log-domain variant is selected automatically above this λ.
    pub const LOG_DOMAIN_LAMBDA: f64 = 50.0;

    /// Config for a given λ with default iteration budget and tolerance.
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_iter: 10_000,
            tol: 1e-9,
            log_domain: lambda > Self::LOG_DOMAIN_LAMBDA,
        }
    }

    pub fn with_log_domain(mut self, log_domain: bool) -> Self {
        self.log_domain = log_domain;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain(format!(
                "sinkhorn lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!(
                "sinkhorn tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Domain("sinkhorn max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self::new(25.0)
    }
}

/// Indices of strictly positive weights; used to drop zero-mass rows/columns
/// before solving and reinsert them afterwards.
pub(crate) fn support(measure: &DiscreteMeasure) -> Vec<usize> {
    measure
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn measure(w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(w.to_vec()).unwrap()
    }

    #[test]
    fn measure_rejects_negative_and_unnormalized() {
        assert!(DiscreteMeasure::new(vec![0.5, -0.5, 1.0]).is_err());
        assert!(DiscreteMeasure::new(vec![0.5, 0.4]).is_err());
        assert!(DiscreteMeasure::new(vec![]).is_err());
        assert!(DiscreteMeasure::new(vec![0.25; 4]).is_ok());
    }

    #[test]
    fn cost_matrix_rejects_non_finite() {
        assert!(CostMatrix::new(array![[0.0, f64::NAN]]).is_err());
        assert!(CostMatrix::new(array![[0.0, f64::INFINITY]]).is_err());
        // negative costs are legal
        assert!(CostMatrix::new(array![[-3.0, 2.0]]).is_ok());
    }

    #[test]
    fn product_coupling_is_admissible() {
        let a = measure(&[0.3, 0.7]);
        let b = measure(&[0.2, 0.5, 0.3]);
        let q = Coupling::product(a, b);
        assert!(validate_coupling(&q, 1e-12));
    }

    #[test]
    fn permutation_coupling_is_admissible() {
        let a = measure(&[0.5, 0.5]);
        let b = measure(&[0.5, 0.5]);
        let q = Coupling::new(array![[0.5, 0.0], [0.0, 0.5]], a, b).unwrap();
        assert!(validate_coupling(&q, 1e-12));
    }

    #[test]
    fn perturbed_entry_fails_validation() {
        let a = measure(&[0.3, 0.7]);
        let b = measure(&[0.2, 0.5, 0.3]);
        let mut q = Coupling::product(a.clone(), b.clone());
        q.entries[[0, 1]] += 1e-3;
        assert!(!validate_coupling(&q, 1e-6));
    }

    #[test]
    fn coupling_shape_mismatch_is_structural_error() {
        let a = measure(&[0.5, 0.5]);
        let b = measure(&[0.5, 0.5]);
        assert!(Coupling::new(Array2::zeros((3, 2)), a, b).is_err());
    }

    #[test]
    fn transport_cost_zero_cost_matrix() {
        let a = measure(&[0.3, 0.7]);
        let b = measure(&[0.5, 0.5]);
        let q = Coupling::product(a, b);
        let c = CostMatrix::new(Array2::zeros((2, 2))).unwrap();
        assert_eq!(transport_cost(&q, &c).unwrap(), 0.0);
    }

    #[test]
    fn transport_cost_of_diagonal_plan() {
        let a = measure(&[0.5, 0.5]);
        let q = Coupling::new(array![[0.5, 0.0], [0.0, 0.5]], a.clone(), a).unwrap();
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(transport_cost(&q, &c).unwrap(), 0.0);
    }

    #[test]
    fn transport_cost_matches_naive_double_loop() {
        let mut rng = 1234_u64;
        let mut next = move || {
            // xorshift; plenty for test data
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        let raw = Array2::from_shape_fn((3, 4), |_| next());
        let total = raw.sum();
        let entries = raw.mapv(|e| e / total);
        let a = DiscreteMeasure::new(entries.sum_axis(ndarray::Axis(1)).to_vec()).unwrap();
        let b = DiscreteMeasure::new(entries.sum_axis(ndarray::Axis(0)).to_vec()).unwrap();
        let c_entries = Array2::from_shape_fn((3, 4), |_| next() * 5.0 - 1.0);
        let q = Coupling::new(entries.clone(), a, b).unwrap();
        let c = CostMatrix::new(c_entries.clone()).unwrap();

        let mut by_hand = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                by_hand += entries[[i, j]] * c_entries[[i, j]];
            }
        }
        assert_abs_diff_eq!(transport_cost(&q, &c).unwrap(), by_hand, epsilon = 1e-15);
    }

    #[test]
    fn transport_cost_shape_mismatch() {
        let a = measure(&[0.5, 0.5]);
        let q = Coupling::product(a.clone(), a);
        let c = CostMatrix::new(Array2::zeros((2, 3))).unwrap();
        assert!(transport_cost(&q, &c).is_err());
    }

    #[test]
    fn entropy_of_point_mass_is_zero() {
        let a = measure(&[1.0, 0.0]);
        let b = measure(&[0.0, 1.0]);
        let q = Coupling::new(array![[0.0, 1.0], [0.0, 0.0]], a, b).unwrap();
        assert_eq!(entropy(&q).unwrap(), 0.0);
    }

    #[test]
    fn entropy_of_uniform_2x2_is_ln4() {
        let a = measure(&[0.5, 0.5]);
        let q = Coupling::new(Array2::from_elem((2, 2), 0.25), a.clone(), a).unwrap();
        assert_abs_diff_eq!(entropy(&q).unwrap(), 4.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn entropy_of_product_coupling_splits() {
        let a = measure(&[0.2, 0.3, 0.5]);
        let b = measure(&[0.6, 0.1, 0.1, 0.2]);
        let q = Coupling::product(a.clone(), b.clone());
        assert_abs_diff_eq!(
            entropy(&q).unwrap(),
            a.entropy() + b.entropy(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn entropy_rejects_negative_entries() {
        let a = measure(&[0.5, 0.5]);
        let mut q = Coupling::product(a.clone(), a);
        q.entries[[0, 0]] = -0.1;
        assert!(entropy(&q).is_err());
    }

    #[test]
    fn wasserstein_identical_measures_is_zero() {
        let a = measure(&[0.2, 0.3, 0.5]);
        let d = CostMatrix::new(array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]]).unwrap();
        let w = wasserstein_p(&d, 2.0, &a, &a).unwrap();
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn wasserstein_two_point_masses() {
        // all mass at support point 0 vs all at point 2, at metric distance 2
        let a = measure(&[1.0, 0.0, 0.0]);
        let b = measure(&[0.0, 0.0, 1.0]);
        let d = CostMatrix::new(array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]]).unwrap();
        for p in [1.0, 1.5, 2.0, 3.0] {
            assert_abs_diff_eq!(wasserstein_p(&d, p, &a, &b).unwrap(), 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn wasserstein_rejects_bad_inputs() {
        let a = measure(&[0.5, 0.5]);
        let asym = CostMatrix::new(array![[0.0, 1.0], [2.0, 0.0]]).unwrap();
        assert!(wasserstein_p(&asym, 1.0, &a, &a).is_err());
        let ok = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(wasserstein_p(&ok, 0.5, &a, &a).is_err());
        let neg = CostMatrix::new(array![[0.0, -1.0], [-1.0, 0.0]]).unwrap();
        assert!(wasserstein_p(&neg, 1.0, &a, &a).is_err());
    }
}
