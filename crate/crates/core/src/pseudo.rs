//! Proportion-constrained pseudo-labeling via per-bag optimal transport.
//!
//! Each bag poses a small OT problem: transport the bag's class proportions
//! (row marginal) onto its instances (uniform column marginal) at cost
//! −log p(k|x), so that probable classes are cheap destinations. The entropic
//! solution gives soft per-instance label distributions; hardening is either
//! a per-column argmax (may bend the proportions) or an exact assignment
//! whose class counts match the proportions by construction. Soft blocks from
//! recent epochs can be ensembled before hardening to damp oscillation.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::ot::{
    exact_ot, sinkhorn, CostMatrix, DiscreteMeasure, SinkhornConfig, EXACT_OT_CAP,
};

/// Posterior floor: probabilities are clamped to `[1e-7, 1]` before taking
/// logs, capping transport costs at −ln(1e-7) ≈ 16.12.
pub const POSTERIOR_FLOOR: f64 = 1e-7;

/// Tolerance for posterior / pseudo-label columns summing to one.
pub const COLUMN_SUM_TOL: f64 = 1e-6;

/// Model posteriors for one bag: a K×n matrix whose column j is the class
/// distribution of instance j. Entries are clamped to the posterior floor at
/// construction.
#[derive(Debug, Clone)]
pub struct BagPosterior {
    probs: Array2<f64>,
}

impl BagPosterior {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::EmptyInput("bag posterior matrix"));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("posterior contains NaN or Inf".into()));
        }
        if probs.iter().any(|&p| p < 0.0 || p > 1.0 + COLUMN_SUM_TOL) {
            return Err(Error::Domain(
                "posterior entries must lie in [0, 1]".into(),
            ));
        }
        for (j, col) in probs.columns().into_iter().enumerate() {
            let sum: f64 = col.sum();
            if (sum - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::Domain(format!(
                    "posterior column {j} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(BagPosterior {
            probs: probs.mapv(|p| p.clamp(POSTERIOR_FLOOR, 1.0)),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.probs.nrows()
    }

    pub fn bag_size(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }
}

/// Whether pseudo-label blocks hold soft distributions or one-hot columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentMode {
    Soft,
    Hard,
}

/// Pseudo-labels for a whole dataset: one K×n_i block per bag, in bag order.
#[derive(Debug, Clone)]
pub struct PseudoLabelMatrix {
    blocks: Vec<Array2<f64>>,
    mode: AssignmentMode,
}

impl PseudoLabelMatrix {
    pub fn new(blocks: Vec<Array2<f64>>, mode: AssignmentMode) -> Result<Self> {
        for (i, block) in blocks.iter().enumerate() {
            for (j, col) in block.columns().into_iter().enumerate() {
                let sum: f64 = col.sum();
                if (sum - 1.0).abs() > COLUMN_SUM_TOL {
                    return Err(Error::Domain(format!(
                        "pseudo-label block {i} column {j} sums to {sum}, expected 1"
                    )));
                }
                if mode == AssignmentMode::Hard {
                    let one_hot = col.iter().all(|&q| q == 0.0 || q == 1.0);
                    if !one_hot {
                        return Err(Error::Domain(format!(
                            "hard pseudo-label block {i} column {j} is not one-hot"
                        )));
                    }
                }
            }
        }
        Ok(PseudoLabelMatrix { blocks, mode })
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.blocks
    }

    pub fn mode(&self) -> AssignmentMode {
        self.mode
    }

    pub fn num_bags(&self) -> usize {
        self.blocks.len()
    }
}

/// Transport cost for a bag: C = −log(clamp(posterior)), shape K×n.
pub fn bag_cost(post: &BagPosterior) -> CostMatrix {
    let entries = post.probs().mapv(|p| -(p.clamp(POSTERIOR_FLOOR, 1.0)).ln());
    CostMatrix::new(entries).expect("clamped probabilities give finite costs")
}

/// Soft assignment for one bag, with the solver convergence flag attached.
#[derive(Debug, Clone)]
pub struct SoftAssignment {
    /// K×n block; every column sums to 1.
    pub block: Array2<f64>,
    pub converged: bool,
    /// L∞ marginal violation of the underlying coupling.
    pub marginal_error: f64,
}

/// Entropic OT between proportions and instances, column-normalized so each
/// instance gets a class distribution.
///
/// Row sums of the underlying coupling equal the bag proportions (up to
/// solver tolerance), so soft labels comply with the proportions in
/// aggregate. Non-convergence is reported, not hidden; callers decide
/// whether to keep the block.
pub fn assign_soft(
    post: &BagPosterior,
    proportions: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<SoftAssignment> {
    if proportions.len() != post.num_classes() {
        return Err(Error::ShapeMismatch {
            context: "proportions vs posterior classes",
            expected: format!("{}", post.num_classes()),
            got: format!("{}", proportions.len()),
        });
    }
    let a = DiscreteMeasure::new(proportions.to_vec())?;
    let b = DiscreteMeasure::uniform(post.bag_size());
    let cost = bag_cost(post);
    let out = sinkhorn(&cost, &a, &b, cfg)?;

    let mut block = out.coupling.entries().clone();
    for mut col in block.columns_mut() {
        let sum: f64 = col.sum();
        if sum <= 0.0 {
            return Err(Error::Numerical {
                context: "soft assignment",
                detail: "coupling column has no mass to normalize".into(),
            });
        }
        col.mapv_inplace(|q| q / sum);
    }
    Ok(SoftAssignment {
        block,
        converged: out.converged,
        marginal_error: out.marginal_error,
    })
}

/// Per-column argmax hardening; ties break toward the lowest class index.
/// The result may deviate from the bag proportions — that is the trade-off
/// of this mode.
pub fn assign_hard(soft: &Array2<f64>) -> Array2<f64> {
    let mut hard = Array2::zeros(soft.dim());
    for (j, col) in soft.columns().into_iter().enumerate() {
        let mut best = 0;
        for (k, &q) in col.iter().enumerate() {
            if q > col[best] {
                best = k;
            }
        }
        hard[[best, j]] = 1.0;
    }
    hard
}

/// Integer class counts from proportions by largest-remainder rounding.
/// Counts sum to `n` exactly; remainder ties favor the lowest class.
pub fn largest_remainder_counts(proportions: &Array1<f64>, n: usize) -> Vec<usize> {
    let k = proportions.len();
    let mut floors = vec![0usize; k];
    let mut remainders = vec![0.0f64; k];
    let mut total = 0usize;
    for (c, &p) in proportions.iter().enumerate() {
        // The nudge keeps empirical proportions (exact count / n) from
        // flooring one unit low through float rounding.
        let scaled = p * n as f64;
        let f = (scaled + 1e-9).floor().max(0.0) as usize;
        let f = f.min(n);
        floors[c] = f;
        remainders[c] = scaled - f as f64;
        total += f;
    }
    let mut order: Vec<usize> = (0..k).collect();
    if total < n {
        order.sort_by(|&x, &y| {
            remainders[y]
                .partial_cmp(&remainders[x])
                .unwrap()
                .then(x.cmp(&y))
        });
        for &c in order.iter().cycle().take(n - total) {
            floors[c] += 1;
        }
    } else if total > n {
        // Only reachable if the input is not a true proportion vector;
        // trim from the smallest remainders.
        order.sort_by(|&x, &y| {
            remainders[x]
                .partial_cmp(&remainders[y])
                .unwrap()
                .then(y.cmp(&x))
        });
        let mut excess = total - n;
        for &c in order.iter().cycle() {
            if excess == 0 {
                break;
            }
            if floors[c] > 0 {
                floors[c] -= 1;
                excess -= 1;
            }
        }
    }
    floors
}

/// Hard assignment with the convergence/fallback provenance attached.
#[derive(Debug, Clone)]
pub struct HardExactAssignment {
    /// K×n one-hot block.
    pub block: Array2<f64>,
    /// True when the instance exceeded the exact solver's size cap and the
    /// entropic-then-argmax fallback produced the block instead.
    pub used_fallback: bool,
}

/// One-hot assignment whose class counts equal the largest-remainder
/// rounding of `proportions * n`, at minimal total cost among all such
/// assignments (an exact OT vertex).
///
/// Bags beyond the exact solver's size cap fall back to
/// [`assign_soft`] + [`assign_hard`], flagged via `used_fallback`; that path
/// no longer guarantees exact counts.
pub fn assign_hard_exact(
    post: &BagPosterior,
    proportions: &Array1<f64>,
    cfg: &SinkhornConfig,
) -> Result<HardExactAssignment> {
    if proportions.len() != post.num_classes() {
        return Err(Error::ShapeMismatch {
            context: "proportions vs posterior classes",
            expected: format!("{}", post.num_classes()),
            got: format!("{}", proportions.len()),
        });
    }
    let (k, n) = (post.num_classes(), post.bag_size());
    if k * n > EXACT_OT_CAP {
        let soft = assign_soft(post, proportions, cfg)?;
        return Ok(HardExactAssignment {
            block: assign_hard(&soft.block),
            used_fallback: true,
        });
    }
    let counts = largest_remainder_counts(proportions, n);
    let a = DiscreteMeasure::new(counts.iter().map(|&c| c as f64 / n as f64).collect())?;
    let b = DiscreteMeasure::uniform(n);
    let cost = bag_cost(post);
    let (coupling, _) = exact_ot(&cost, &a, &b)?;
    // Integral marginals (units of 1/n) make the vertex one-hot per column;
    // read it off by argmax to shed the 1/n scaling.
    let block = assign_hard(coupling.entries());
    Ok(HardExactAssignment {
        block,
        used_fallback: false,
    })
}

/// Elementwise mean of the up-to-`window` most recent soft blocks for a bag.
/// Averaging happens on soft distributions; harden afterwards if needed.
pub fn ensemble_average(history: &[Array2<f64>], window: usize) -> Result<Array2<f64>> {
    if window == 0 {
        return Err(Error::Domain("ensemble window must be positive".into()));
    }
    if history.is_empty() {
        return Err(Error::EmptyInput("pseudo-label history"));
    }
    let recent = &history[history.len().saturating_sub(window)..];
    let shape = recent[0].dim();
    let mut mean = Array2::zeros(shape);
    for block in recent {
        if block.dim() != shape {
            return Err(Error::ShapeMismatch {
                context: "ensemble history blocks",
                expected: format!("{}x{}", shape.0, shape.1),
                got: format!("{}x{}", block.dim().0, block.dim().1),
            });
        }
        mean += block;
    }
    mean /= recent.len() as f64;
    Ok(mean)
}

/// Writes pseudo-labels as CSV rows (bag_index, instance_index, class,
/// weight), where instance_index counts within the bag. Zero weights are
/// skipped, so hard blocks export one row per instance.
pub fn export_pseudo_labels(matrix: &PseudoLabelMatrix, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["bag_index", "instance_index", "class", "weight"])?;
    for (bag_idx, block) in matrix.blocks().iter().enumerate() {
        for j in 0..block.ncols() {
            for k in 0..block.nrows() {
                let weight = block[[k, j]];
                if weight > 0.0 {
                    writer.write_record([
                        bag_idx.to_string(),
                        j.to_string(),
                        k.to_string(),
                        format!("{weight}"),
                    ])?;
                }
            }
        }
    }
    writer.flush()?;
    Ok(())
}
