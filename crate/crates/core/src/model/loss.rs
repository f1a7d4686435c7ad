//! Loss family: cross-entropy on soft targets, reverse cross-entropy, their
//! symmetric combination, and the bag-proportion (KL) loss.
//!
//! Every loss returns its value together with analytic gradients. Gradients
//! are first written in probability space (dL/dp), then pushed through the
//! shared softmax/MLP backward pass, so the clamping rules below are
//! differentiated exactly as implemented: where a probability is clamped,
//! its gradient contribution is zero.

use ndarray::{Array1, Array2};

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::model::{LossOutput, MlpClassifier, PROB_FLOOR};

/// Substitute for log(0) when a reverse-cross-entropy target entry is
/// exactly zero.
pub const RCE_ZERO_LOG: f64 = -4.0;

/// Tolerance for target rows summing to one.
const TARGET_TOL: f64 = 1e-6;

fn validate_targets(model: &MlpClassifier, x: &Array2<f64>, targets: &Array2<f64>) -> Result<()> {
    if targets.nrows() != x.nrows() || targets.ncols() != model.num_classes() {
        return Err(Error::ShapeMismatch {
            context: "targets vs batch and classes",
            expected: format!("{}x{}", x.nrows(), model.num_classes()),
            got: format!("{}x{}", targets.nrows(), targets.ncols()),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyInput("loss batch"));
    }
    for (i, row) in targets.rows().into_iter().enumerate() {
        if row.iter().any(|&t| !(0.0..=1.0 + TARGET_TOL).contains(&t)) {
            return Err(Error::Domain(format!(
                "target row {i} has entries outside [0, 1]"
            )));
        }
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > TARGET_TOL {
            return Err(Error::Domain(format!(
                "target row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy −Σ_k t_k log p_k against soft targets, with the
/// probability clamped inside the log.
pub fn ce_loss(model: &MlpClassifier, x: &Array2<f64>, targets: &Array2<f64>) -> Result<LossOutput> {
    validate_targets(model, x, targets)?;
    let cache = model.forward_cached(x)?;
    let n = x.nrows() as f64;

    let mut value = 0.0;
    let mut d_probs = Array2::zeros(cache.probs.dim());
    for i in 0..x.nrows() {
        for k in 0..model.num_classes() {
            let t = targets[[i, k]];
            let p = cache.probs[[i, k]];
            value -= t * p.clamp(PROB_FLOOR, 1.0).ln();
            if p >= PROB_FLOOR {
                d_probs[[i, k]] = -t / p.clamp(PROB_FLOOR, 1.0) / n;
            }
        }
    }
    let (grads, input_grad) = model.backprop(&cache, &d_probs);
    Ok(LossOutput {
        value: value / n,
        grads,
        input_grad,
    })
}

/// log with the zero-target substitution: ℓ(t) = A for t = 0, else a
/// clamped log.
fn rce_log(t: f64, zero_log: f64) -> f64 {
    if t == 0.0 {
        zero_log
    } else {
        t.clamp(PROB_FLOOR, 1.0).ln()
    }
}

/// Mean reverse cross-entropy −Σ_k p_k ℓ(t_k): prediction and target swap
/// roles, which bounds the loss even under corrupted targets.
pub fn rce_loss(
    model: &MlpClassifier,
    x: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<LossOutput> {
    validate_targets(model, x, targets)?;
    let cache = model.forward_cached(x)?;
    let n = x.nrows() as f64;

    let mut value = 0.0;
    let mut d_probs = Array2::zeros(cache.probs.dim());
    for i in 0..x.nrows() {
        for k in 0..model.num_classes() {
            let log_t = rce_log(targets[[i, k]], RCE_ZERO_LOG);
            value -= cache.probs[[i, k]] * log_t;
            d_probs[[i, k]] = -log_t / n;
        }
    }
    let (grads, input_grad) = model.backprop(&cache, &d_probs);
    Ok(LossOutput {
        value: value / n,
        grads,
        input_grad,
    })
}

/// Symmetric cross-entropy alpha·CE + beta·RCE, gradients combined the same
/// way.
pub fn sce_loss(
    model: &MlpClassifier,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    alpha: f64,
    beta: f64,
) -> Result<LossOutput> {
    if !(alpha >= 0.0) || !(beta >= 0.0) || (alpha == 0.0 && beta == 0.0) {
        return Err(Error::Domain(format!(
            "sce weights must be nonnegative and not both zero, got alpha={alpha} beta={beta}"
        )));
    }
    let ce = ce_loss(model, x, targets)?;
    let rce = rce_loss(model, x, targets)?;
    let mut grads = ce.grads;
    for g in grads.weights.iter_mut() {
        g.mapv_inplace(|v| v * alpha);
    }
    for g in grads.biases.iter_mut() {
        g.mapv_inplace(|v| v * alpha);
    }
    grads.add_scaled(&rce.grads, beta);
    Ok(LossOutput {
        value: alpha * ce.value + beta * rce.value,
        grads,
        input_grad: alpha * &ce.input_grad + beta * &rce.input_grad,
    })
}

/// Bag-proportion loss: mean over bags of KL(p_i ‖ p̂_i), where p̂_i is the
/// average posterior over the bag's instances. Zero exactly when every bag's
/// posterior mean matches its prior proportions.
pub fn dllp_loss(
    model: &MlpClassifier,
    features: &Array2<f64>,
    bags: &[&Bag],
) -> Result<LossOutput> {
    if bags.is_empty() {
        return Err(Error::EmptyInput("bag list for proportion loss"));
    }
    let k = model.num_classes();
    for bag in bags {
        if bag.proportions().len() != k {
            return Err(Error::ShapeMismatch {
                context: "bag proportions vs model classes",
                expected: format!("{k}"),
                got: format!("{}", bag.proportions().len()),
            });
        }
    }

    // One forward pass over the union of bag members.
    let flat: Vec<usize> = bags
        .iter()
        .flat_map(|b| b.instance_indices().iter().copied())
        .collect();
    let x = gather_rows(features, &flat)?;
    let cache = model.forward_cached(&x)?;
    let num_bags = bags.len() as f64;

    let mut value = 0.0;
    let mut d_probs = Array2::zeros(cache.probs.dim());
    let mut row = 0;
    for bag in bags {
        let n_i = bag.size() as f64;
        let mut mean = Array1::<f64>::zeros(k);
        for j in 0..bag.size() {
            for c in 0..k {
                mean[c] += cache.probs[[row + j, c]] / n_i;
            }
        }
        for c in 0..k {
            let p = bag.proportions()[c];
            if p > 0.0 {
                let clamped = mean[c].clamp(PROB_FLOOR, 1.0);
                value += p * (p.ln() - clamped.ln());
                if mean[c] >= PROB_FLOOR {
                    let d_mean = -p / clamped / num_bags;
                    for j in 0..bag.size() {
                        d_probs[[row + j, c]] = d_mean / n_i;
                    }
                }
            }
        }
        row += bag.size();
    }
    let (grads, input_grad) = model.backprop(&cache, &d_probs);
    Ok(LossOutput {
        value: value / num_bags,
        grads,
        input_grad,
    })
}

/// Copies the listed rows of `features` into a dense batch.
pub(crate) fn gather_rows(features: &Array2<f64>, indices: &[usize]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((indices.len(), features.ncols()));
    for (r, &i) in indices.iter().enumerate() {
        if i >= features.nrows() {
            return Err(Error::Domain(format!(
                "instance index {i} outside feature matrix of {} rows",
                features.nrows()
            )));
        }
        out.row_mut(r).assign(&features.row(i));
    }
    Ok(out)
}
