//! Two-stage training driver.
//!
//! Stage one fits the classifier to bag-level proportions alone, then turns
//! its posteriors into per-instance pseudo-labels with one transport solve
//! per bag. Stage two alternates supervised minibatch updates on the current
//! pseudo-labels with a transport-based refresh of those labels at the end
//! of every epoch. A separate single-loop variant ([`peot_loop`]) alternates
//! labeling and fitting until the transport plans stop moving.
//!
//! Everything here is deterministic for a fixed [`TrainConfig::seed`]: bag
//! shuffles and mixup draws derive their generators from the master seed,
//! and the per-bag refresh fan-out joins results by bag index so thread
//! count never changes the output.

mod stages;

pub use stages::{
    peot_loop, stage1_dllp, stage2_plot, PeotResult, Stage1Result, Stage2Result,
    PEOT_MAX_OUTER,
};

use std::time::Duration;

use ndarray::{Array2, ArrayView1};

use crate::data::{LabeledDataset, LlpDataset};
use crate::error::{Error, Result};
use crate::model::MlpClassifier;
use crate::ot::SinkhornConfig;
use crate::pseudo::PseudoLabelMatrix;

/// How pseudo-labels are rebuilt at the end of each stage-two epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtMode {
    /// Column-normalized transport plans kept as full distributions.
    Soft,
    /// Argmax of the windowed average of recent soft plans.
    Hard,
    /// Vertex plan whose per-class counts match the bag proportions exactly.
    HardExact,
    /// No refresh at all; targets stay at their initial values. This is the
    /// ablation baseline that isolates the effect of the transport step.
    None,
}

/// Supervised loss used for stage-two minibatch updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Plain cross-entropy.
    Ce,
    /// Symmetric cross-entropy, more tolerant of wrong pseudo-labels.
    Sce,
}

/// Every knob of the two-stage run in one place.
///
/// The defaults reproduce the small two-dimensional benchmark setup; callers
/// typically override epochs, the bag size dependent `minibatch_bags`, and
/// the refresh mode.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Hidden layer widths of the classifier (input/output come from data).
    pub hidden_dims: Vec<usize>,
    /// Proportion-matching epochs before the first labeling pass.
    pub stage1_epochs: usize,
    /// Alternating train/refresh epochs.
    pub stage2_epochs: usize,
    /// Bags per minibatch; the minibatch unit is always a whole bag.
    pub minibatch_bags: usize,
    /// Entropic regularization strength for every per-bag transport solve.
    pub lambda: f64,
    pub ot_mode: OtMode,
    pub loss_mode: LossMode,
    /// Cross-entropy weight inside the symmetric loss.
    pub sce_alpha: f64,
    /// Reverse-term weight inside the symmetric loss.
    pub sce_beta: f64,
    pub use_mixup: bool,
    /// Beta-distribution shape for mixing coefficients.
    pub mixup_alpha: f64,
    /// Number of recent soft plans averaged before hardening or reporting.
    pub ensemble_window: usize,
    /// Plan-movement threshold that stops the single-loop variant.
    pub outer_tol: f64,
    /// Full-batch epochs per outer iteration of the single-loop variant.
    pub peot_inner_epochs: usize,
    pub learning_rate: f64,
    /// Halve the learning rate every this many epochs; 0 disables the
    /// schedule. The schedule restarts when stage two begins.
    pub lr_halve_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    /// Worker threads for the per-bag refresh; 0 picks the machine default.
    pub num_threads: usize,
    /// Master seed; all internal generators derive from it.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32, 32, 32],
            stage1_epochs: 200,
            stage2_epochs: 100,
            minibatch_bags: 8,
            lambda: 25.0,
            ot_mode: OtMode::Soft,
            loss_mode: LossMode::Sce,
            sce_alpha: 1.0,
            sce_beta: 1.0,
            use_mixup: false,
            mixup_alpha: 1.0,
            ensemble_window: 5,
            outer_tol: 1e-3,
            peot_inner_epochs: 5,
            learning_rate: 1e-3,
            lr_halve_every: 100,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            sinkhorn_tol: 1e-4,
            sinkhorn_max_iter: 5_000,
            num_threads: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Rejects parameter combinations that would make a run meaningless.
    pub fn validate(&self) -> Result<()> {
        if let Some(&w) = self.hidden_dims.iter().find(|&&w| w == 0) {
            return Err(Error::Domain(format!("hidden layer width {w} must be positive")));
        }
        if self.minibatch_bags == 0 {
            return Err(Error::Domain("minibatch_bags must be at least 1".into()));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Domain(format!(
                "regularization strength lambda = {} must be positive and finite",
                self.lambda
            )));
        }
        if self.ensemble_window == 0 {
            return Err(Error::Domain("ensemble_window must be at least 1".into()));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::Domain(format!(
                "outer_tol = {} must be positive",
                self.outer_tol
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Domain(format!(
                "learning_rate = {} must be positive and finite",
                self.learning_rate
            )));
        }
        if self.use_mixup && (!(self.mixup_alpha > 0.0) || !self.mixup_alpha.is_finite()) {
            return Err(Error::Domain(format!(
                "mixup_alpha = {} must be positive and finite when mixup is on",
                self.mixup_alpha
            )));
        }
        if self.loss_mode == LossMode::Sce {
            if self.sce_alpha < 0.0 || self.sce_beta < 0.0 {
                return Err(Error::Domain(
                    "symmetric loss weights must be nonnegative".into(),
                ));
            }
            if self.sce_alpha == 0.0 && self.sce_beta == 0.0 {
                return Err(Error::Domain(
                    "symmetric loss weights must not both be zero".into(),
                ));
            }
        }
        if !(self.sinkhorn_tol > 0.0) {
            return Err(Error::Domain(format!(
                "sinkhorn_tol = {} must be positive",
                self.sinkhorn_tol
            )));
        }
        if self.sinkhorn_max_iter == 0 {
            return Err(Error::Domain("sinkhorn_max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Solver settings shared by every per-bag transport solve.
    ///
    /// The clamped negative-log costs reach about 16, so `lambda * cost` can
    /// exceed 400 and the plain scaling kernel underflows; the log-domain
    /// solver is therefore always used here.
    pub(crate) fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig::new(self.lambda)
            .with_log_domain(true)
            .with_tol(self.sinkhorn_tol)
            .with_max_iter(self.sinkhorn_max_iter)
    }
}

/// One row of the per-epoch diagnostics table.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch index within stage two.
    pub epoch: usize,
    /// Accuracy of the raw classifier argmax on the training instances.
    pub train_posterior_accuracy: f64,
    /// Accuracy of the most recent per-bag soft transport plans.
    pub refined_accuracy: f64,
    /// Accuracy of the windowed average of recent soft plans.
    pub ensemble_accuracy: f64,
    /// Accuracy on the held-out set, or NaN when none was supplied.
    pub test_accuracy: f64,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
}

/// Full diagnostics of a stage-two run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub records: Vec<EpochRecord>,
    /// Total wall time. Kept in memory only; artifact writers must skip it
    /// so that identical runs produce identical files.
    pub wall_time: Duration,
    /// Bags that kept their previous pseudo-labels because a refresh solve
    /// did not converge.
    pub refresh_failures: usize,
}

/// Classification quality of a model on a labeled dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Recall per true class; NaN for classes absent from the data.
    pub per_class_accuracy: Vec<f64>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Array2<usize>,
}

/// Index of the largest entry, preferring the lowest index on exact ties.
pub(crate) fn argmax(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scores a classifier on labeled data.
///
/// Ties in the posterior argmax resolve to the lowest class index, so a
/// constant uniform classifier on a balanced two-class set scores exactly
/// one half.
pub fn evaluate(model: &MlpClassifier, data: &LabeledDataset) -> Result<Evaluation> {
    if model.input_dim() != data.dim() {
        return Err(Error::ShapeMismatch {
            context: "model input vs dataset features",
            expected: format!("{}", model.input_dim()),
            got: format!("{}", data.dim()),
        });
    }
    if model.num_classes() != data.num_classes() {
        return Err(Error::ShapeMismatch {
            context: "model classes vs dataset classes",
            expected: format!("{}", model.num_classes()),
            got: format!("{}", data.num_classes()),
        });
    }
    let k = data.num_classes();
    let probs = model.forward(data.features())?;
    let mut confusion = Array2::<usize>::zeros((k, k));
    for (i, &label) in data.eval_labels().iter().enumerate() {
        confusion[[label, argmax(probs.row(i))]] += 1;
    }
    let total = data.len();
    let correct: usize = (0..k).map(|c| confusion[[c, c]]).sum();
    let per_class_accuracy = (0..k)
        .map(|c| {
            let support: usize = confusion.row(c).sum();
            confusion[[c, c]] as f64 / support as f64
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / total as f64,
        per_class_accuracy,
        confusion,
    })
}

/// Fraction of instances whose pseudo-label argmax matches the true label.
pub fn pseudo_label_accuracy(labels: &PseudoLabelMatrix, llp: &LlpDataset) -> Result<f64> {
    if labels.num_bags() != llp.num_bags() {
        return Err(Error::ShapeMismatch {
            context: "pseudo-label bags vs dataset bags",
            expected: format!("{}", llp.num_bags()),
            got: format!("{}", labels.num_bags()),
        });
    }
    blocks_accuracy(labels.blocks(), llp)
}

/// Same as [`pseudo_label_accuracy`] but for raw per-bag blocks.
pub(crate) fn blocks_accuracy(blocks: &[Array2<f64>], llp: &LlpDataset) -> Result<f64> {
    let labels = llp.parent().eval_labels();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (block, bag) in blocks.iter().zip(llp.bags()) {
        if block.ncols() != bag.size() || block.nrows() != llp.num_classes() {
            return Err(Error::ShapeMismatch {
                context: "pseudo-label block vs bag",
                expected: format!("{}x{}", llp.num_classes(), bag.size()),
                got: format!("{}x{}", block.nrows(), block.ncols()),
            });
        }
        for (col, &inst) in bag.instance_indices().iter().enumerate() {
            if argmax(block.column(col)) == labels[inst] {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput("pseudo-label accuracy over zero instances"));
    }
    Ok(correct as f64 / total as f64)
}

/// Derives an independent stream seed from the master seed.
///
/// SplitMix-style finalization keeps distinct (stream, index) pairs from
/// colliding even when the base seeds are small consecutive integers.
pub(crate) fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0xA076_1D64_78BD_642F)
        ^ index.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bag, LabeledDataset, LlpDataset};
    use crate::pseudo::AssignmentMode;
    use ndarray::{arr1, arr2, Array1};

    fn two_point_dataset() -> LabeledDataset {
        LabeledDataset::new(
            arr2(&[[0.5, -0.5], [1.0, 2.0]]),
            vec![0, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn default_config_validates() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = |f: fn(&mut TrainConfig)| {
            let mut cfg = TrainConfig::default();
            f(&mut cfg);
            cfg.validate().unwrap_err()
        };
        bad(|c| c.minibatch_bags = 0);
        bad(|c| c.lambda = 0.0);
        bad(|c| c.lambda = f64::NAN);
        bad(|c| c.ensemble_window = 0);
        bad(|c| c.outer_tol = 0.0);
        bad(|c| c.learning_rate = -1.0);
        // The mixing weight is only checked when mixup is actually on.
        bad(|c| {
            c.use_mixup = true;
            c.mixup_alpha = 0.0;
        });
        let mut off = TrainConfig::default();
        off.use_mixup = false;
        off.mixup_alpha = 0.0;
        off.validate().unwrap();
        bad(|c| {
            c.sce_alpha = 0.0;
            c.sce_beta = 0.0;
        });
        bad(|c| c.sinkhorn_tol = 0.0);
        bad(|c| c.sinkhorn_max_iter = 0);
        bad(|c| c.hidden_dims = vec![16, 0]);
        // outer_tol may be infinite: the single-loop variant then stops at
        // its first movement check.
        let mut cfg = TrainConfig::default();
        cfg.outer_tol = f64::INFINITY;
        cfg.validate().unwrap();
    }

    #[test]
    fn uniform_classifier_scores_exactly_half_on_balanced_two_class_data() {
        // Freshly zeroed model: all logits equal, every argmax tie resolves
        // to class 0.
        let model = MlpClassifier::zeros(&[2, 2]).unwrap();
        let eval = evaluate(&model, &two_point_dataset()).unwrap();
        assert_eq!(eval.accuracy, 0.5);
        assert_eq!(eval.confusion, arr2(&[[1usize, 0], [1, 0]]));
        assert_eq!(eval.per_class_accuracy, vec![1.0, 0.0]);
    }

    #[test]
    fn separating_classifier_scores_one() {
        let mut model = MlpClassifier::zeros(&[2, 2]).unwrap();
        // Predict class 1 iff the first coordinate is positive at scale 10.
        model.weights_mut()[0] = arr2(&[[-10.0, 10.0], [0.0, 0.0]]);
        let data = LabeledDataset::new(
            arr2(&[[-1.0, 0.3], [2.0, -0.7], [-0.4, 1.0]]),
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let eval = evaluate(&model, &data).unwrap();
        assert_eq!(eval.accuracy, 1.0);
        assert_eq!(eval.confusion, arr2(&[[2usize, 0], [0, 1]]));
    }

    #[test]
    fn evaluate_rejects_mismatched_shapes() {
        let model = MlpClassifier::zeros(&[3, 2]).unwrap();
        assert!(evaluate(&model, &two_point_dataset()).is_err());
        let model = MlpClassifier::zeros(&[2, 4]).unwrap();
        assert!(evaluate(&model, &two_point_dataset()).is_err());
    }

    #[test]
    fn pseudo_label_accuracy_counts_argmax_matches() {
        let data = LabeledDataset::new(
            arr2(&[[0.0], [1.0], [2.0], [3.0]]),
            vec![0, 1, 1, 0],
            2,
        )
        .unwrap();
        let bags = vec![
            Bag::new(vec![0, 1], arr1(&[0.5, 0.5])).unwrap(),
            Bag::new(vec![2, 3], arr1(&[0.5, 0.5])).unwrap(),
        ];
        let llp = LlpDataset::new(data, bags).unwrap();
        // First bag: both columns favor class 0 -> instance 0 right,
        // instance 1 wrong. Second bag: columns favor classes 1 and 0 ->
        // both right.
        let blocks = vec![
            arr2(&[[0.9, 0.6], [0.1, 0.4]]),
            arr2(&[[0.2, 0.8], [0.8, 0.2]]),
        ];
        let q = PseudoLabelMatrix::new(blocks, AssignmentMode::Soft).unwrap();
        let acc = pseudo_label_accuracy(&q, &llp).unwrap();
        assert_eq!(acc, 0.75);
    }

    #[test]
    fn pseudo_label_accuracy_rejects_bag_count_mismatch() {
        let data = LabeledDataset::new(arr2(&[[0.0], [1.0]]), vec![0, 1], 2).unwrap();
        let bags = vec![Bag::new(vec![0, 1], arr1(&[0.5, 0.5])).unwrap()];
        let llp = LlpDataset::new(data, bags).unwrap();
        let q = PseudoLabelMatrix::new(
            vec![
                arr2(&[[0.6, 0.4], [0.4, 0.6]]),
                arr2(&[[0.6, 0.4], [0.4, 0.6]]),
            ],
            AssignmentMode::Soft,
        )
        .unwrap();
        assert!(pseudo_label_accuracy(&q, &llp).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(Array1::from(vec![1.0, 1.0, 1.0]).view()), 0);
        assert_eq!(argmax(Array1::from(vec![0.2, 0.9, 0.9]).view()), 1);
    }

    #[test]
    fn derived_seeds_separate_streams_and_indices() {
        let a = derive_seed(7, 1, 0);
        let b = derive_seed(7, 2, 0);
        let c = derive_seed(7, 1, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, 1, 0));
    }
}
