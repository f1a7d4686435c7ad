//! Adam optimizer with bias correction.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{MlpClassifier, ModelGradients};

/// First/second moment accumulators plus hyperparameters. The learning rate
/// is mutable so a schedule can adjust it between steps; everything else is
/// fixed at construction.
#[derive(Debug, Clone)]
pub struct AdamState {
    weight_m: Vec<Array2<f64>>,
    weight_v: Vec<Array2<f64>>,
    bias_m: Vec<Array1<f64>>,
    bias_v: Vec<Array1<f64>>,
    step: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    /// Moments shaped after `model`, zero-initialized.
    pub fn new(model: &MlpClassifier, learning_rate: f64, beta1: f64, beta2: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        for (name, beta) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Domain(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        Ok(AdamState {
            weight_m: model.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            weight_v: model.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            bias_m: model.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
            bias_v: model.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
            step: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Adjusts the learning rate for subsequent steps (schedules live in the
    /// training loop, not here).
    pub fn set_learning_rate(&mut self, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0) {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        self.learning_rate = learning_rate;
        Ok(())
    }
}

/// One Adam update: m and v track the gradient and its square with
/// exponential decay, bias-corrected by the step count.
pub fn adam_step(
    model: &mut MlpClassifier,
    grads: &ModelGradients,
    state: &mut AdamState,
) -> Result<()> {
    if grads.weights.len() != model.weights().len() {
        return Err(Error::ShapeMismatch {
            context: "gradient blocks vs model layers",
            expected: format!("{}", model.weights().len()),
            got: format!("{}", grads.weights.len()),
        });
    }
    for (l, g) in grads.weights.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: "adam step",
                detail: format!("non-finite gradient in weights[{l}]"),
            });
        }
    }
    for (l, g) in grads.biases.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: "adam step",
                detail: format!("non-finite gradient in biases[{l}]"),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let m_corr = 1.0 - state.beta1.powi(t);
    let v_corr = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);

    for (l, g) in grads.weights.iter().enumerate() {
        let m = &mut state.weight_m[l];
        let v = &mut state.weight_v[l];
        ndarray::Zip::from(&mut model.weights_mut()[l])
            .and(m)
            .and(v)
            .and(g)
            .for_each(|w, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / m_corr) / ((*v / v_corr).sqrt() + eps);
            });
    }
    for (l, g) in grads.biases.iter().enumerate() {
        let m = &mut state.bias_m[l];
        let v = &mut state.bias_v[l];
        ndarray::Zip::from(&mut model.biases_mut()[l])
            .and(m)
            .and(v)
            .and(g)
            .for_each(|w, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / m_corr) / ((*v / v_corr).sqrt() + eps);
            });
    }
    Ok(())
}
