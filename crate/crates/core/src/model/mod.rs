//! Feedforward softmax classifier with hand-derived gradients.
//!
//! A deliberately small dependency-free MLP: ReLU hidden layers, softmax
//! output, and explicit backpropagation. Losses produce gradients in
//! probability space; [`MlpClassifier::backprop`] converts them through the
//! softmax and the hidden stack, so every loss shares one backward pass.

mod adam;
mod checkpoint;
mod loss;
mod mixup;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{ce_loss, dllp_loss, rce_loss, sce_loss, RCE_ZERO_LOG};
pub use mixup::{mix_with_lambda, mixup};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Probability floor used inside every log (matches the pseudo-labeling
/// clamp, so costs and losses saturate at the same scale).
pub const PROB_FLOOR: f64 = 1e-7;

/// Per-parameter gradients, shaped exactly like the classifier's parameters.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ModelGradients {
    fn zeros_like(model: &MlpClassifier) -> Self {
        ModelGradients {
            weights: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// self += scale * other, used to combine loss components.
    fn add_scaled(&mut self, other: &ModelGradients, scale: f64) {
        for (acc, g) in self.weights.iter_mut().zip(&other.weights) {
            acc.scaled_add(scale, g);
        }
        for (acc, g) in self.biases.iter_mut().zip(&other.biases) {
            acc.scaled_add(scale, g);
        }
    }
}

/// A loss value with its gradients: per-parameter blocks plus the gradient
/// with respect to the input batch (handy for gradient checking and
/// input-space diagnostics).
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grads: ModelGradients,
    pub input_grad: Array2<f64>,
}

/// Forward-pass intermediates needed by the backward pass: the input and
/// every post-ReLU hidden activation, plus the softmax output.
pub(crate) struct ForwardCache {
    /// activations[0] = input; activations[l] feeds layer l.
    activations: Vec<Array2<f64>>,
    pub(crate) probs: Array2<f64>,
}

/// Multilayer perceptron: `layer_dims = [d, hidden.., K]`, ReLU between
/// hidden layers, softmax on the output.
#[derive(Debug, Clone)]
pub struct MlpClassifier {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl MlpClassifier {
    /// He-uniform weight initialization (limit √(6/fan_in)) with zero
    /// biases, drawn from a seeded generator.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (d_in, d_out) = (pair[0], pair[1]);
            let limit = (6.0 / d_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((d_in, d_out), |_| {
                rng.random_range(-limit..limit)
            }));
            biases.push(Array1::zeros(d_out));
        }
        Ok(MlpClassifier {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// All-zero parameters: outputs are exactly uniform. Useful as a neutral
    /// starting point in tests.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|p| Array2::zeros((p[0], p[1])))
            .collect();
        let biases = layer_dims.windows(2).map(|p| Array1::zeros(p[1])).collect();
        Ok(MlpClassifier {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    fn validate_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 {
            return Err(Error::Domain(
                "layer_dims needs at least input and output sizes".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Domain("layer dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    /// Mutable parameter access for optimizers, serialization and gradient
    /// checking.
    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    /// Class probabilities for a batch (rows are instances).
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.probs)
    }

    pub(crate) fn forward_cached(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "input features vs model input dim",
                expected: format!("{} columns", self.input_dim()),
                got: format!("{} columns", x.ncols()),
            });
        }
        let num_layers = self.weights.len();
        let mut activations = Vec::with_capacity(num_layers);
        activations.push(x.clone());
        for l in 0..num_layers - 1 {
            let mut z = activations[l].dot(&self.weights[l]) + &self.biases[l];
            z.mapv_inplace(|v| v.max(0.0));
            activations.push(z);
        }
        let logits =
            activations[num_layers - 1].dot(&self.weights[num_layers - 1]) + &self.biases[num_layers - 1];
        Ok(ForwardCache {
            activations,
            probs: softmax_rows(&logits),
        })
    }

    /// Backward pass from a probability-space gradient dL/dp (already scaled
    /// by any batch averaging). Returns parameter gradients and dL/dx.
    pub(crate) fn backprop(
        &self,
        cache: &ForwardCache,
        d_probs: &Array2<f64>,
    ) -> (ModelGradients, Array2<f64>) {
        let mut grads = ModelGradients::zeros_like(self);
        let mut dz = softmax_backward(&cache.probs, d_probs);
        let mut input_grad = Array2::zeros((0, 0));
        for l in (0..self.weights.len()).rev() {
            grads.weights[l] = cache.activations[l].t().dot(&dz);
            grads.biases[l] = dz.sum_axis(Axis(0));
            let da = dz.dot(&self.weights[l].t());
            if l > 0 {
                // ReLU gate: the stored activation is already max(z, 0), so
                // positivity of the activation marks the open units.
                dz = da * cache.activations[l].mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
            } else {
                input_grad = da;
            }
        }
        (grads, input_grad)
    }
}

/// Row-wise softmax with max subtraction.
fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    out
}

/// Converts dL/dp to dL/dz through the softmax Jacobian:
/// dz_j = p_j (dp_j − Σ_k dp_k p_k), row by row.
fn softmax_backward(probs: &Array2<f64>, d_probs: &Array2<f64>) -> Array2<f64> {
    let mut dz = Array2::zeros(probs.dim());
    for i in 0..probs.nrows() {
        let dot: f64 = (0..probs.ncols())
            .map(|k| d_probs[[i, k]] * probs[[i, k]])
            .sum();
        for j in 0..probs.ncols() {
            dz[[i, j]] = probs[[i, j]] * (d_probs[[i, j]] - dot);
        }
    }
    dz
}
