//! Brute-force OT reference solver for integral-margin instances.
//!
//! When every marginal weight is a multiple of 1/denominator, the vertices of
//! the transportation polytope are integral in scaled units, so the optimum
//! can be found by enumerating integer contingency tables with the given
//! margins. This is the independent oracle the simplex solver is checked
//! against; it is deliberately simple and only accepts tiny instances.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ot::{transport_cost, CostMatrix, Coupling, DiscreteMeasure};

/// Enumeration is exponential in the worst case; beyond this many cells the
/// oracle refuses rather than hang.
const ENUMERATION_CAP: usize = 32;

/// Integrality tolerance: `weight * denominator` must be this close to an
/// integer for the scaled instance to be trusted.
const INTEGRALITY_TOL: f64 = 1e-6;

/// Finds an exact optimal plan by enumerating all integer transport tables.
///
/// Both marginals must consist of multiples of `1/denominator`. Intended as a
/// test oracle: on instances whose scaled masses and costs are exactly
/// representable (e.g. dyadic values), the returned cost is exact, pruning
/// included, even under negative costs.
pub fn enumerate_exact_ot(
    c: &CostMatrix,
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    denominator: u64,
) -> Result<(Coupling, f64)> {
    if c.nrows() != a.len() || c.ncols() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "cost matrix vs marginals",
            expected: format!("{}x{}", a.len(), b.len()),
            got: format!("{}x{}", c.nrows(), c.ncols()),
        });
    }
    if c.nrows() * c.ncols() > ENUMERATION_CAP {
        return Err(Error::ExactSizeCap {
            rows: c.nrows(),
            cols: c.ncols(),
            cap: ENUMERATION_CAP,
        });
    }
    if denominator == 0 {
        return Err(Error::Domain("denominator must be positive".into()));
    }

    let row_units = scale_to_integers(a.weights().as_slice().unwrap(), denominator)?;
    let col_units = scale_to_integers(b.weights().as_slice().unwrap(), denominator)?;
    let row_total: u64 = row_units.iter().sum();
    let col_total: u64 = col_units.iter().sum();
    if row_total != col_total {
        return Err(Error::Domain(format!(
            "scaled margins disagree: rows sum to {row_total}, columns to {col_total}"
        )));
    }

    let mut search = Search::new(c.entries(), &row_units, &col_units);
    search.prime_with_north_west();
    search.fill_row(0, 0.0);

    let (n, m) = (a.len(), b.len());
    let denom = denominator as f64;
    let entries = Array2::from_shape_fn((n, m), |(i, j)| search.best_table[i * m + j] as f64 / denom);
    let coupling = Coupling::new(entries, a.clone(), b.clone())?;
    let cost = transport_cost(&coupling, c)?;
    Ok((coupling, cost))
}

fn scale_to_integers(weights: &[f64], denominator: u64) -> Result<Vec<u64>> {
    weights
        .iter()
        .map(|&w| {
            let scaled = w * denominator as f64;
            let rounded = scaled.round();
            if (scaled - rounded).abs() > INTEGRALITY_TOL {
                return Err(Error::Domain(format!(
                    "weight {w} is not a multiple of 1/{denominator}"
                )));
            }
            Ok(rounded as u64)
        })
        .collect()
}

/// Depth-first enumeration over rows, cell by cell in row-major order, with a
/// per-row lower bound for pruning. Costs are accumulated in scaled units
/// (integer mass times cost) and divided out only at the very end.
struct Search<'a> {
    cost: &'a Array2<f64>,
    row_units: &'a [u64],
    n: usize,
    m: usize,
    col_rem: Vec<u64>,
    table: Vec<u64>,
    best_table: Vec<u64>,
    best_cost: f64,
    /// `row_min_tail[i * m + j]` = min cost in row i over columns j..
    row_min_tail: Vec<f64>,
    /// `future_bound[i]` = sum over rows i.. of row mass times row min cost;
    /// a valid lower bound on any completion because masses are nonnegative.
    future_bound: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(cost: &'a Array2<f64>, row_units: &'a [u64], col_units: &'a [u64]) -> Self {
        let (n, m) = cost.dim();
        let mut row_min_tail = vec![0.0; n * m];
        for i in 0..n {
            let mut min = f64::INFINITY;
            for j in (0..m).rev() {
                min = min.min(cost[[i, j]]);
                row_min_tail[i * m + j] = min;
            }
        }
        let mut future_bound = vec![0.0; n + 1];
        for i in (0..n).rev() {
            future_bound[i] = future_bound[i + 1] + row_units[i] as f64 * row_min_tail[i * m];
        }
        Search {
            cost,
            row_units,
            n,
            m,
            col_rem: col_units.to_vec(),
            table: vec![0; n * m],
            best_table: vec![0; n * m],
            best_cost: f64::INFINITY,
            row_min_tail,
            future_bound,
        }
    }

    /// Seeds the incumbent with the north-west-corner feasible table so that
    /// pruning has a finite budget from the start.
    fn prime_with_north_west(&mut self) {
        let mut a_rem: Vec<u64> = self.row_units.to_vec();
        let mut b_rem = self.col_rem.clone();
        let mut cost = 0.0;
        for i in 0..self.n {
            for j in 0..self.m {
                let t = a_rem[i].min(b_rem[j]);
                self.best_table[i * self.m + j] = t;
                a_rem[i] -= t;
                b_rem[j] -= t;
                cost += t as f64 * self.cost[[i, j]];
            }
        }
        self.best_cost = cost;
    }

    fn fill_row(&mut self, i: usize, partial: f64) {
        if i == self.n {
            if partial < self.best_cost {
                self.best_cost = partial;
                self.best_table.copy_from_slice(&self.table);
            }
            return;
        }
        self.fill_cell(i, 0, self.row_units[i], partial);
    }

    fn fill_cell(&mut self, i: usize, j: usize, row_rem: u64, partial: f64) {
        let bound = partial
            + row_rem as f64 * self.row_min_tail[i * self.m + j]
            + self.future_bound[i + 1];
        if bound >= self.best_cost {
            return;
        }
        if j == self.m - 1 {
            // Last column: the row remainder is forced.
            if row_rem <= self.col_rem[j] {
                self.place(i, j, row_rem, partial, 0);
            }
            return;
        }
        if i == self.n - 1 {
            // Last row: each cell must absorb the whole column remainder.
            let x = self.col_rem[j];
            if x <= row_rem {
                self.place(i, j, x, partial, row_rem - x);
            }
            return;
        }
        let max = row_rem.min(self.col_rem[j]);
        for x in 0..=max {
            self.place(i, j, x, partial, row_rem - x);
        }
    }

    fn place(&mut self, i: usize, j: usize, x: u64, partial: f64, row_rem_after: u64) {
        self.table[i * self.m + j] = x;
        self.col_rem[j] -= x;
        let partial = partial + x as f64 * self.cost[[i, j]];
        if j == self.m - 1 {
            self.fill_row(i + 1, partial);
        } else {
            self.fill_cell(i, j + 1, row_rem_after, partial);
        }
        self.col_rem[j] += x;
        self.table[i * self.m + j] = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{exact_ot, validate_coupling};
    use ndarray::array;

    fn measure(w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(w.to_vec()).unwrap()
    }

    /// Tiny deterministic generator for seeding test instances.
    struct XorShift(u64);

    impl XorShift {
        fn next(&mut self) -> u64 {
            let mut x = self.0;
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            self.0 = x;
            x
        }

        fn below(&mut self, n: u64) -> u64 {
            self.next() % n
        }
    }

    /// Masses k/16 from dropping 16 units into bins; zero bins are possible
    /// and intended.
    fn dyadic_measure(rng: &mut XorShift, bins: usize) -> DiscreteMeasure {
        let mut counts = vec![0u64; bins];
        for _ in 0..16 {
            counts[rng.below(bins as u64) as usize] += 1;
        }
        measure(&counts.iter().map(|&k| k as f64 / 16.0).collect::<Vec<_>>())
    }

    #[test]
    fn matches_simplex_exactly_on_dyadic_instances() {
        let mut rng = XorShift(0x9e3779b97f4a7c15);
        for trial in 0..25 {
            let n = 2 + (rng.below(3) as usize);
            let m = 2 + (rng.below(5) as usize);
            let a = dyadic_measure(&mut rng, n);
            let b = dyadic_measure(&mut rng, m);
            let c = CostMatrix::new(Array2::from_shape_fn((n, m), |_| {
                rng.below(25) as f64 / 8.0
            }))
            .unwrap();
            let (plan_e, cost_e) = enumerate_exact_ot(&c, &a, &b, 16).unwrap();
            let (_, cost_s) = exact_ot(&c, &a, &b).unwrap();
            assert_eq!(
                cost_e, cost_s,
                "trial {trial}: enumeration {cost_e} vs simplex {cost_s}"
            );
            assert!(validate_coupling(&plan_e, 1e-9));
        }
    }

    #[test]
    fn agrees_with_simplex_under_negative_costs() {
        let a = measure(&[0.25, 0.5, 0.25]);
        let b = measure(&[0.5, 0.25, 0.25]);
        let c = CostMatrix::new(array![
            [-1.0, 0.5, 2.0],
            [0.25, -0.75, 1.5],
            [3.0, 0.0, -0.5]
        ])
        .unwrap();
        let (_, cost_e) = enumerate_exact_ot(&c, &a, &b, 4).unwrap();
        let (_, cost_s) = exact_ot(&c, &a, &b).unwrap();
        assert_eq!(cost_e, cost_s);
    }

    #[test]
    fn permutation_instance_recovers_zero_cost() {
        let a = measure(&[0.5, 0.5]);
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let (plan, cost) = enumerate_exact_ot(&c, &a, &a, 2).unwrap();
        assert_eq!(cost, 0.0);
        assert_eq!(plan.entries()[[0, 0]], 0.5);
        assert_eq!(plan.entries()[[1, 1]], 0.5);
    }

    #[test]
    fn zero_cost_instance_terminates_immediately_via_pruning() {
        let a = measure(&[0.25, 0.25, 0.25, 0.25]);
        let b = measure(&[0.5, 0.25, 0.25]);
        let c = CostMatrix::new(Array2::zeros((4, 3))).unwrap();
        let (plan, cost) = enumerate_exact_ot(&c, &a, &b, 4).unwrap();
        assert_eq!(cost, 0.0);
        assert!(validate_coupling(&plan, 1e-9));
    }

    #[test]
    fn zero_mass_margins_are_respected() {
        let a = measure(&[0.5, 0.0, 0.5]);
        let b = measure(&[1.0, 0.0]);
        let c = CostMatrix::new(Array2::from_elem((3, 2), 1.0)).unwrap();
        let (plan, cost) = enumerate_exact_ot(&c, &a, &b, 2).unwrap();
        assert_eq!(cost, 1.0);
        assert_eq!(plan.entries()[[1, 0]], 0.0);
        assert_eq!(plan.entries()[[0, 1]], 0.0);
    }

    #[test]
    fn rejects_non_integral_weights() {
        let a = measure(&[1.0 / 3.0, 2.0 / 3.0]);
        let b = measure(&[0.5, 0.5]);
        let c = CostMatrix::new(Array2::zeros((2, 2))).unwrap();
        let err = enumerate_exact_ot(&c, &a, &b, 16).unwrap_err();
        assert!(err.to_string().contains("not a multiple"));
    }

    #[test]
    fn rejects_instances_over_the_enumeration_cap() {
        let a = DiscreteMeasure::uniform(6);
        let c = CostMatrix::new(Array2::zeros((6, 6))).unwrap();
        match enumerate_exact_ot(&c, &a, &a, 6) {
            Err(Error::ExactSizeCap { cap, .. }) => assert_eq!(cap, ENUMERATION_CAP),
            other => panic!("expected size-cap error, got {other:?}"),
        }
    }
}
