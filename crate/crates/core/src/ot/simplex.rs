//! Exact discrete OT via the transportation simplex method.
//!
//! Solves min ⟨X, C⟩ over the transportation polytope U(a, b) to LP optimality.
//! The basis is a spanning tree of the bipartite row/column graph with exactly
//! n + m − 1 basic cells, so the returned plan is a vertex of the polytope.
//! Bland's rule (smallest row-major index for both the entering and the
//! leaving variable) is used throughout, which rules out cycling on the
//! degenerate bases that proportion-style marginals produce all the time.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ot::{support, transport_cost, CostMatrix, Coupling, DiscreteMeasure, EXACT_OT_CAP};

/// Reduced costs above this magnitude count as a genuine violation; anything
/// smaller is float noise around an optimal basis.
const PIVOT_TOL: f64 = 1e-10;

/// Safety cap on simplex pivots. Bland's rule terminates finitely in exact
/// arithmetic; this guards against float-induced stalls.
const MAX_PIVOTS_PER_NODE: usize = 200;

/// Computes an exact optimal transport plan and its cost.
///
/// The plan is a vertex solution with at most n + m − 1 nonzero entries.
/// Rows and columns of zero mass are dropped before solving and reinserted as
/// zeros. Instances larger than `EXACT_OT_CAP` cells are refused; use
/// [`sinkhorn`](crate::ot::sinkhorn) beyond that.
pub fn exact_ot(
    c: &CostMatrix,
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
) -> Result<(Coupling, f64)> {
    if c.nrows() != a.len() || c.ncols() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "cost matrix vs marginals",
            expected: format!("{}x{}", a.len(), b.len()),
            got: format!("{}x{}", c.nrows(), c.ncols()),
        });
    }
    if c.nrows() * c.ncols() > EXACT_OT_CAP {
        return Err(Error::ExactSizeCap {
            rows: c.nrows(),
            cols: c.ncols(),
            cap: EXACT_OT_CAP,
        });
    }

    let rows = support(a);
    let cols = support(b);
    let a_red: Vec<f64> = rows.iter().map(|&i| a.weights()[i]).collect();
    let b_red: Vec<f64> = cols.iter().map(|&j| b.weights()[j]).collect();
    let c_red = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| {
        c.entries()[[rows[i], cols[j]]]
    });

    let mut tableau = Tableau::north_west(&c_red, &a_red, &b_red);
    tableau.solve()?;

    let mut entries = Array2::zeros((a.len(), b.len()));
    for (ri, &i) in rows.iter().enumerate() {
        for (rj, &j) in cols.iter().enumerate() {
            entries[[i, j]] = tableau.plan[[ri, rj]];
        }
    }
    let coupling = Coupling::new(entries, a.clone(), b.clone())?;
    let cost = transport_cost(&coupling, c)?;
    Ok((coupling, cost))
}

/// Simplex working state on the reduced (positive-mass) instance.
struct Tableau<'a> {
    cost: &'a Array2<f64>,
    plan: Array2<f64>,
    /// Basis membership per cell; exactly n + m − 1 cells are true.
    basic: Array2<bool>,
    n: usize,
    m: usize,
}

impl<'a> Tableau<'a> {
    /// North-west corner start: walk the staircase from (0, 0) to
    /// (n−1, m−1), always advancing one index, which yields exactly
    /// n + m − 1 basic cells (some possibly degenerate at zero).
    fn north_west(cost: &'a Array2<f64>, a: &[f64], b: &[f64]) -> Self {
        let (n, m) = cost.dim();
        let mut plan = Array2::zeros((n, m));
        let mut basic = Array2::from_elem((n, m), false);
        let mut a_rem = a.to_vec();
        let mut b_rem = b.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let t = a_rem[i].min(b_rem[j]);
            plan[[i, j]] = t;
            basic[[i, j]] = true;
            a_rem[i] -= t;
            b_rem[j] -= t;
            if i == n - 1 && j == m - 1 {
                break;
            }
            // On a tie (both exhausted) advance the row, leaving a
            // degenerate zero cell in the next step.
            if j == m - 1 || (i < n - 1 && a_rem[i] <= 0.0) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Tableau {
            cost,
            plan,
            basic,
            n,
            m,
        }
    }

    fn solve(&mut self) -> Result<()> {
        let max_pivots = MAX_PIVOTS_PER_NODE * (self.n + self.m);
        for _ in 0..max_pivots {
            let (u, v) = self.duals()?;
            let Some((ei, ej)) = self.entering(&u, &v) else {
                return Ok(());
            };
            self.pivot(ei, ej)?;
        }
        Err(Error::Numerical {
            context: "transportation simplex",
            detail: format!("no optimum after {max_pivots} pivots"),
        })
    }

    /// Adjacency of the basis tree: rows[i] = columns j with (i, j) basic,
    /// cols[j] = rows i with (i, j) basic.
    fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut rows = vec![Vec::new(); self.n];
        let mut cols = vec![Vec::new(); self.m];
        for i in 0..self.n {
            for j in 0..self.m {
                if self.basic[[i, j]] {
                    rows[i].push(j);
                    cols[j].push(i);
                }
            }
        }
        (rows, cols)
    }

    /// Dual potentials from u_i + v_j = c_ij on basic cells, anchored at
    /// u_0 = 0 and propagated over the basis tree.
    fn duals(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (rows, cols) = self.adjacency();
        let mut u = vec![f64::NAN; self.n];
        let mut v = vec![f64::NAN; self.m];
        u[0] = 0.0;
        // Nodes 0..n are rows, n..n+m are columns.
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            if node < self.n {
                let i = node;
                for &j in &rows[i] {
                    if v[j].is_nan() {
                        v[j] = self.cost[[i, j]] - u[i];
                        queue.push_back(self.n + j);
                    }
                }
            } else {
                let j = node - self.n;
                for &i in &cols[j] {
                    if u[i].is_nan() {
                        u[i] = self.cost[[i, j]] - v[j];
                        queue.push_back(i);
                    }
                }
            }
        }
        if u.iter().chain(v.iter()).any(|x| x.is_nan()) {
            return Err(Error::Numerical {
                context: "transportation simplex",
                detail: "basis graph is not a spanning tree".into(),
            });
        }
        Ok((u, v))
    }

    /// First non-basic cell in row-major order whose reduced cost
    /// c_ij − u_i − v_j is meaningfully negative (Bland's entering rule).
    fn entering(&self, u: &[f64], v: &[f64]) -> Option<(usize, usize)> {
        for i in 0..self.n {
            for j in 0..self.m {
                if !self.basic[[i, j]] && self.cost[[i, j]] - u[i] - v[j] < -PIVOT_TOL {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Basic cells on the tree path from row node `ei` to column node `ej`,
    /// in path order starting at the row end.
    fn cycle_path(&self, ei: usize, ej: usize) -> Result<Vec<(usize, usize)>> {
        let (rows, cols) = self.adjacency();
        let total = self.n + self.m;
        let target = self.n + ej;
        let mut pred: Vec<Option<(usize, (usize, usize))>> = vec![None; total];
        let mut seen = vec![false; total];
        seen[ei] = true;
        let mut queue = std::collections::VecDeque::from([ei]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            if node < self.n {
                let i = node;
                for &j in &rows[i] {
                    if !seen[self.n + j] {
                        seen[self.n + j] = true;
                        pred[self.n + j] = Some((node, (i, j)));
                        queue.push_back(self.n + j);
                    }
                }
            } else {
                let j = node - self.n;
                for &i in &cols[j] {
                    if !seen[i] {
                        seen[i] = true;
                        pred[i] = Some((node, (i, j)));
                        queue.push_back(i);
                    }
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != ei {
            let Some((prev, edge)) = pred[node] else {
                return Err(Error::Numerical {
                    context: "transportation simplex",
                    detail: "entering cell closes no cycle in the basis tree".into(),
                });
            };
            path.push(edge);
            node = prev;
        }
        path.reverse();
        Ok(path)
    }

    /// Pushes flow θ around the cycle closed by the entering cell. Path
    /// edges at even positions (starting at the entering row) lose θ, odd
    /// positions gain θ; the smallest even-position value fixes θ and the
    /// lexicographically smallest cell attaining it leaves the basis.
    fn pivot(&mut self, ei: usize, ej: usize) -> Result<()> {
        let path = self.cycle_path(ei, ej)?;
        let mut theta = f64::INFINITY;
        for (pos, &(i, j)) in path.iter().enumerate() {
            if pos % 2 == 0 {
                theta = theta.min(self.plan[[i, j]]);
            }
        }
        let mut leaving = None;
        for (pos, &(i, j)) in path.iter().enumerate() {
            if pos % 2 == 0 && self.plan[[i, j]] == theta {
                leaving = match leaving {
                    Some(cell) if cell < (i, j) => Some(cell),
                    _ => Some((i, j)),
                };
            }
        }
        let leaving = leaving.expect("even-position path edge always exists");

        self.plan[[ei, ej]] += theta;
        for (pos, &(i, j)) in path.iter().enumerate() {
            if pos % 2 == 0 {
                self.plan[[i, j]] -= theta;
            } else {
                self.plan[[i, j]] += theta;
            }
        }
        self.plan[[leaving.0, leaving.1]] = 0.0;
        self.basic[[ei, ej]] = true;
        self.basic[[leaving.0, leaving.1]] = false;
        Ok(())
    }
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
    fn permutation_cost_instance_puts_all_mass_on_diagonal() {
        let a = measure(&[0.5, 0.5]);
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let (plan, cost) = exact_ot(&c, &a, &a).unwrap();
        assert_eq!(cost, 0.0);
        assert_eq!(plan.entries()[[0, 0]], 0.5);
        assert_eq!(plan.entries()[[1, 1]], 0.5);
    }

    #[test]
    fn unique_optimum_with_unbalanced_masses() {
        // Diagonal is free, off-diagonal costs 2: push the overlapping
        // 2 * 0.25 through the diagonal, route the rest at cost 2 * 0.5.
        let a = measure(&[0.75, 0.25]);
        let b = measure(&[0.25, 0.75]);
        let c = CostMatrix::new(array![[0.0, 2.0], [2.0, 0.0]]).unwrap();
        let (plan, cost) = exact_ot(&c, &a, &b).unwrap();
        assert_eq!(cost, 1.0);
        assert_eq!(plan.entries()[[0, 0]], 0.25);
        assert_eq!(plan.entries()[[0, 1]], 0.5);
        assert_eq!(plan.entries()[[1, 0]], 0.0);
        assert_eq!(plan.entries()[[1, 1]], 0.25);
    }

    #[test]
    fn modular_cost_instance_has_flat_objective() {
        // c_ij = i-increment + j-increment makes every feasible plan cost
        // the same, so ties are everywhere; the solver must still land on
        // a feasible vertex at that cost.
        let a = measure(&[0.25, 0.75]);
        let b = measure(&[0.5, 0.5]);
        let c = CostMatrix::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let (plan, cost) = exact_ot(&c, &a, &b).unwrap();
        assert_abs_diff_eq!(cost, 3.0, epsilon = 1e-12);
        assert!(validate_coupling(&plan, 1e-9));
    }

    #[test]
    fn monotone_matching_on_sorted_line_points() {
        let a = DiscreteMeasure::uniform(3);
        let s: [f64; 3] = [0.0, 1.0, 4.0];
        let t: [f64; 3] = [1.0, 2.0, 5.0];
        let c =
            CostMatrix::new(Array2::from_shape_fn((3, 3), |(i, j)| (s[i] - t[j]).abs())).unwrap();
        let (plan, cost) = exact_ot(&c, &a, &a).unwrap();
        assert_abs_diff_eq!(cost, 1.0, epsilon = 1e-12);
        for i in 0..3 {
            assert_abs_diff_eq!(plan.entries()[[i, i]], 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn negative_costs_are_handled() {
        let a = measure(&[0.5, 0.5]);
        let c = CostMatrix::new(array![[-1.0, 0.0], [0.0, -1.0]]).unwrap();
        let (_, cost) = exact_ot(&c, &a, &a).unwrap();
        assert_eq!(cost, -1.0);
    }

    #[test]
    fn solution_is_a_vertex_with_sparse_support() {
        let a = measure(&[0.125, 0.25, 0.5, 0.125]);
        let b = measure(&[0.375, 0.125, 0.25, 0.125, 0.125]);
        let c = CostMatrix::new(Array2::from_shape_fn((4, 5), |(i, j)| {
            ((7 * i + 3 * j + 2) % 11) as f64 / 8.0
        }))
        .unwrap();
        let (plan, _) = exact_ot(&c, &a, &b).unwrap();
        let nonzeros = plan.entries().iter().filter(|&&x| x > 0.0).count();
        assert!(nonzeros <= 4 + 5 - 1, "vertex bound violated: {nonzeros}");
        assert!(validate_coupling(&plan, 1e-9));
    }

    #[test]
    fn beats_product_and_north_west_plans() {
        let a = measure(&[0.25, 0.375, 0.375]);
        let b = measure(&[0.5, 0.125, 0.375]);
        let c = CostMatrix::new(array![
            [0.875, 0.25, 1.5],
            [0.125, 1.0, 0.625],
            [0.75, 0.5, 0.25]
        ])
        .unwrap();
        let (_, cost) = exact_ot(&c, &a, &b).unwrap();
        let product = Coupling::product(a.clone(), b.clone());
        assert!(cost <= transport_cost(&product, &c).unwrap() + 1e-12);
        let nw = Tableau::north_west(c.entries(), &[0.25, 0.375, 0.375], &[0.5, 0.125, 0.375]);
        let nw_cost: f64 = (&nw.plan * c.entries()).sum();
        assert!(cost <= nw_cost + 1e-12);
    }

    #[test]
    fn zero_mass_rows_and_columns_stay_zero() {
        let a = measure(&[0.5, 0.0, 0.5]);
        let b = measure(&[0.0, 1.0]);
        let c = CostMatrix::new(Array2::from_elem((3, 2), 2.0)).unwrap();
        let (plan, cost) = exact_ot(&c, &a, &b).unwrap();
        assert_eq!(cost, 2.0);
        assert_eq!(plan.entries()[[1, 0]], 0.0);
        assert_eq!(plan.entries()[[1, 1]], 0.0);
        assert_eq!(plan.entries()[[0, 0]], 0.0);
        assert_eq!(plan.entries()[[2, 0]], 0.0);
    }

    #[test]
    fn oversized_instances_are_refused() {
        let a = DiscreteMeasure::uniform(65);
        let b = DiscreteMeasure::uniform(64);
        let c = CostMatrix::new(Array2::zeros((65, 64))).unwrap();
        match exact_ot(&c, &a, &b) {
            Err(Error::ExactSizeCap { rows, cols, cap }) => {
                assert_eq!((rows, cols, cap), (65, 64, EXACT_OT_CAP));
            }
            other => panic!("expected size-cap error, got {other:?}"),
        }
    }

    #[test]
    fn north_west_start_has_full_basis_on_degenerate_ties() {
        // Equal cumulative sums force ties at every staircase step.
        let a = [0.25, 0.25, 0.25, 0.25];
        let cost = Array2::zeros((4, 4));
        let t = Tableau::north_west(&cost, &a, &a);
        let basic = t.basic.iter().filter(|&&b| b).count();
        assert_eq!(basic, 4 + 4 - 1);
    }
}
