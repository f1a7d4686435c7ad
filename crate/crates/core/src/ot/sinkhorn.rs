//! Entropic-regularized OT via Sinkhorn scaling.
//!
//! Minimizes ⟨Q, C⟩ − (1/λ)H(Q) over couplings of (a, b) by alternating
//! row/column rescaling of K = exp(−λC). Two variants: plain scaling, and a
//! log-domain form (log-sum-exp updates) that survives large λ where K
//! underflows.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::ot::{support, CostMatrix, Coupling, DiscreteMeasure, SinkhornConfig};

/// Solver output. `converged` is false when the iteration budget ran out
/// before both marginals matched within `tol`; callers must check it.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub coupling: Coupling,
    pub converged: bool,
    pub iterations: usize,
    /// L∞ marginal violation at the final iterate.
    pub marginal_error: f64,
}

/// Solves entropic OT between `a` and `b` under cost `c`.
///
/// Zero-mass rows/columns are removed before iterating and reinserted as zero
/// rows/columns of the output plan.
pub fn sinkhorn(
    c: &CostMatrix,
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    cfg.validate()?;
    if c.nrows() != a.len() || c.ncols() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "cost matrix vs marginals",
            expected: format!("{}x{}", a.len(), b.len()),
            got: format!("{}x{}", c.nrows(), c.ncols()),
        });
    }

    let rows = support(a);
    let cols = support(b);
    let a_red: Vec<f64> = rows.iter().map(|&i| a.weights()[i]).collect();
    let b_red: Vec<f64> = cols.iter().map(|&j| b.weights()[j]).collect();
    let c_red = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| {
        c.entries()[[rows[i], cols[j]]]
    });

    let (plan_red, converged, iterations, marginal_error) = if cfg.log_domain {
        run_log_domain(&c_red, &a_red, &b_red, cfg)?
    } else {
        run_scaling(&c_red, &a_red, &b_red, cfg)?
    };

    let mut entries = Array2::zeros((a.len(), b.len()));
    for (ri, &i) in rows.iter().enumerate() {
        for (rj, &j) in cols.iter().enumerate() {
            entries[[i, j]] = plan_red[[ri, rj]];
        }
    }

    Ok(SinkhornResult {
        coupling: Coupling::new(entries, a.clone(), b.clone())?,
        converged,
        iterations,
        marginal_error,
    })
}

fn violation(plan: &Array2<f64>, a: &[f64], b: &[f64]) -> f64 {
    let row_sums = plan.sum_axis(Axis(1));
    let col_sums = plan.sum_axis(Axis(0));
    let row_err = row_sums
        .iter()
        .zip(a)
        .map(|(s, a)| (s - a).abs())
        .fold(0.0, f64::max);
    let col_err = col_sums
        .iter()
        .zip(b)
        .map(|(s, b)| (s - b).abs())
        .fold(0.0, f64::max);
    row_err.max(col_err)
}

fn run_scaling(
    c: &Array2<f64>,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> Result<(Array2<f64>, bool, usize, f64)> {
    let (n, m) = c.dim();
    let kernel = c.mapv(|e| (-cfg.lambda * e).exp());
    let mut u = Array1::<f64>::ones(n);
    let mut v = Array1::<f64>::ones(m);

    let mut plan = Array2::zeros((n, m));
    let mut err = f64::INFINITY;
    for iter in 1..=cfg.max_iter {
        // u = a ./ (K v), v = b ./ (Kᵀ u)
        let kv = kernel.dot(&v);
        for i in 0..n {
            u[i] = a[i] / kv[i];
        }
        let ktu = kernel.t().dot(&u);
        for j in 0..m {
            v[j] = b[j] / ktu[j];
        }
        if u.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                context: "sinkhorn scaling",
                detail: format!(
                    "scaling vector became non-finite at iteration {iter}; \
                     exp(-lambda*C) likely underflowed, retry with log_domain = true"
                ),
            });
        }
        for i in 0..n {
            for j in 0..m {
                plan[[i, j]] = u[i] * kernel[[i, j]] * v[j];
            }
        }
        err = violation(&plan, a, b);
        if err <= cfg.tol {
            return Ok((plan, true, iter, err));
        }
    }
    Ok((plan, false, cfg.max_iter, err))
}

fn logsumexp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn run_log_domain(
    c: &Array2<f64>,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> Result<(Array2<f64>, bool, usize, f64)> {
    let (n, m) = c.dim();
    let log_k = c.mapv(|e| -cfg.lambda * e);
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(m);

    let mut plan = Array2::zeros((n, m));
    let mut err = f64::INFINITY;
    for iter in 1..=cfg.max_iter {
        for i in 0..n {
            f[i] = log_a[i] - logsumexp((0..m).map(|j| log_k[[i, j]] + g[j]));
        }
        for j in 0..m {
            g[j] = log_b[j] - logsumexp((0..n).map(|i| log_k[[i, j]] + f[i]));
        }
        if f.iter().any(|x| x.is_nan()) || g.iter().any(|x| x.is_nan()) {
            return Err(Error::Numerical {
                context: "sinkhorn log-domain",
                detail: format!("potential became NaN at iteration {iter}"),
            });
        }
        for i in 0..n {
            for j in 0..m {
                plan[[i, j]] = (f[i] + g[j] + log_k[[i, j]]).exp();
            }
        }
        err = violation(&plan, a, b);
        if err <= cfg.tol {
            return Ok((plan, true, iter, err));
        }
    }
    Ok((plan, false, cfg.max_iter, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::validate_coupling;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn measure(w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(w.to_vec()).unwrap()
    }

    #[test]
    fn zero_cost_gives_product_coupling() {
        let a = measure(&[0.5, 0.5]);
        let c = CostMatrix::new(Array2::zeros((2, 2))).unwrap();
        for log_domain in [false, true] {
            let cfg = SinkhornConfig::new(3.0).with_log_domain(log_domain);
            let out = sinkhorn(&c, &a, &a, &cfg).unwrap();
            assert!(out.converged);
            for e in out.coupling.entries() {
                assert_abs_diff_eq!(*e, 0.25, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn tiny_lambda_approaches_independence_coupling() {
        let a = measure(&[0.3, 0.7]);
        let b = measure(&[0.5, 0.5]);
        let c = CostMatrix::new(array![[0.0, 1.0], [2.0, 0.5]]).unwrap();
        let cfg = SinkhornConfig::new(1e-6);
        let out = sinkhorn(&c, &a, &b, &cfg).unwrap();
        assert!(out.converged);
        let expected = array![[0.15, 0.15], [0.35, 0.35]];
        for (q, e) in out.coupling.entries().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(*q, *e, epsilon = 1e-4);
        }
    }

    #[test]
    fn large_lambda_matches_permutation_optimum() {
        let a = measure(&[0.5, 0.5]);
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let cfg = SinkhornConfig::new(100.0);
        assert!(cfg.log_domain);
        let out = sinkhorn(&c, &a, &a, &cfg).unwrap();
        assert!(out.converged);
        let cost = crate::ot::transport_cost(&out.coupling, &c).unwrap();
        assert!(cost.abs() < 1e-3, "cost {cost} should be near 0");
        assert_abs_diff_eq!(out.coupling.entries()[[0, 0]], 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(out.coupling.entries()[[1, 1]], 0.5, epsilon = 1e-3);
    }

    #[test]
    fn converged_output_is_feasible() {
        let a = measure(&[0.1, 0.2, 0.3, 0.4]);
        let b = measure(&[0.25, 0.25, 0.5]);
        let c = CostMatrix::new(array![
            [0.3, 1.2, 0.7],
            [0.9, 0.1, 0.4],
            [0.2, 0.8, 1.5],
            [1.1, 0.6, 0.05]
        ])
        .unwrap();
        // One lambda below the log-domain switch, one above: both paths.
        // Large lambda converges at a much slower linear rate, so it gets a
        // correspondingly looser (but still downstream-acceptable) target.
        let configs = [
            SinkhornConfig::new(5.0),
            SinkhornConfig::new(60.0).with_tol(1e-6).with_max_iter(200_000),
        ];
        for cfg in configs {
            let out = sinkhorn(&c, &a, &b, &cfg).unwrap();
            assert!(out.converged);
            assert!(validate_coupling(&out.coupling, 1e-6));
            assert!(out.marginal_error <= cfg.tol);
        }
    }

    #[test]
    fn zero_mass_marginals_are_reinserted_as_zero() {
        let a = measure(&[0.5, 0.0, 0.5]);
        let b = measure(&[1.0, 0.0]);
        let c = CostMatrix::new(Array2::from_elem((3, 2), 1.0)).unwrap();
        let out = sinkhorn(&c, &a, &b, &SinkhornConfig::new(10.0)).unwrap();
        assert!(out.converged);
        let q = out.coupling.entries();
        assert_eq!(q[[1, 0]], 0.0);
        assert_eq!(q[[0, 1]], 0.0);
        assert_eq!(q[[1, 1]], 0.0);
        assert_abs_diff_eq!(q[[0, 0]], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(q[[2, 0]], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn plain_mode_underflow_is_reported_with_hint() {
        // lambda * cost ~ 1e4: exp underflows to exact zero rows
        let a = measure(&[0.5, 0.5]);
        let c = CostMatrix::new(array![[20.0, 20.0], [20.0, 20.0]]).unwrap();
        let cfg = SinkhornConfig::new(500.0).with_log_domain(false);
        let err = sinkhorn(&c, &a, &a, &cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("log_domain"), "unexpected message: {msg}");
    }

    #[test]
    fn non_convergence_is_flagged_not_silent() {
        let a = measure(&[0.3, 0.7]);
        let b = measure(&[0.6, 0.4]);
        let c = CostMatrix::new(array![[0.3, 0.9], [0.2, 0.1]]).unwrap();
        let cfg = SinkhornConfig {
            lambda: 40.0,
            max_iter: 1,
            tol: 1e-14,
            log_domain: false,
        };
        let out = sinkhorn(&c, &a, &b, &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn rejects_invalid_config_and_shapes() {
        let a = measure(&[0.5, 0.5]);
        let c = CostMatrix::new(Array2::zeros((2, 2))).unwrap();
        let mut cfg = SinkhornConfig::new(10.0);
        cfg.lambda = -1.0;
        assert!(sinkhorn(&c, &a, &a, &cfg).is_err());
        let c_bad = CostMatrix::new(Array2::zeros((3, 2))).unwrap();
        assert!(sinkhorn(&c_bad, &a, &a, &SinkhornConfig::new(1.0)).is_err());
    }
}

