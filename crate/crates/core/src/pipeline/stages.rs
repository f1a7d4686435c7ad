//! The training stages themselves.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LlpDataset;
use crate::error::{Error, Result};
use crate::model::{
    adam_step, ce_loss, dllp_loss, mixup, sce_loss, AdamState, LossOutput, MlpClassifier,
};
use crate::pseudo::{
    assign_hard, assign_hard_exact, assign_soft, ensemble_average, AssignmentMode, BagPosterior,
    PseudoLabelMatrix, SoftAssignment,
};

use super::{
    blocks_accuracy, derive_seed, evaluate, EpochRecord, LossMode, OtMode, RunMetrics,
    TrainConfig,
};
use crate::data::LabeledDataset;

/// Outer-iteration cap of the single-loop variant.
pub const PEOT_MAX_OUTER: usize = 50;

const STREAM_STAGE1: u64 = 1;
const STREAM_STAGE2: u64 = 2;
const STREAM_MIXUP: u64 = 3;

/// Output of the proportion-matching stage.
#[derive(Debug)]
pub struct Stage1Result {
    pub model: MlpClassifier,
    /// Soft pseudo-labels from one transport solve per bag.
    pub initial_labels: PseudoLabelMatrix,
    /// Mean minibatch loss per epoch, in order.
    pub epoch_losses: Vec<f64>,
    /// Bags whose labeling solve stopped at the iteration cap; their blocks
    /// are still used (column normalization keeps them valid targets).
    pub labeling_failures: usize,
}

/// Output of the alternating train/refresh stage.
#[derive(Debug)]
pub struct Stage2Result {
    pub model: MlpClassifier,
    pub metrics: RunMetrics,
    /// Pseudo-labels as they stood after the final epoch.
    pub final_labels: PseudoLabelMatrix,
}

/// Output of the single-loop variant.
#[derive(Debug)]
pub struct PeotResult {
    pub model: MlpClassifier,
    /// Frobenius movement of the stacked transport plans per outer
    /// iteration.
    pub deltas: Vec<f64>,
    /// Plan snapshots at coupling scale (columns sum to one over bag size):
    /// the uniform start followed by one snapshot per outer iteration.
    pub trace: Vec<Vec<Array2<f64>>>,
    pub converged: bool,
    pub iterations: usize,
    pub labeling_failures: usize,
}

/// Fits the classifier to bag proportions alone, then pseudo-labels every
/// bag with one entropic transport solve.
///
/// With `stage1_epochs = 0` the labeling pass runs on the untouched model,
/// so the pseudo-labels reflect its initial posteriors.
pub fn stage1_dllp(
    model: MlpClassifier,
    llp: &LlpDataset,
    cfg: &TrainConfig,
) -> Result<Stage1Result> {
    cfg.validate()?;
    check_model_against_data(&model, llp)?;
    let mut model = model;
    let mut epoch_losses = Vec::with_capacity(cfg.stage1_epochs);
    if cfg.stage1_epochs > 0 {
        let mut opt = AdamState::new(&model, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2)?;
        for epoch in 1..=cfg.stage1_epochs {
            opt.set_learning_rate(scheduled_lr(cfg, epoch))?;
            let order = shuffled_bag_order(
                llp.num_bags(),
                derive_seed(cfg.seed, STREAM_STAGE1, epoch as u64),
            );
            let mut total = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.minibatch_bags) {
                let bag_refs: Vec<_> = chunk.iter().map(|&i| &llp.bags()[i]).collect();
                let out = dllp_loss(&model, llp.features(), &bag_refs)?;
                guard_finite(out.value, "proportion loss", epoch)?;
                adam_step(&mut model, &out.grads, &mut opt)?;
                total += out.value;
                batches += 1;
            }
            epoch_losses.push(total / batches as f64);
        }
    }
    let (blocks, labeling_failures) = label_all_bags_soft(&model, llp, cfg)?;
    let initial_labels = PseudoLabelMatrix::new(blocks, AssignmentMode::Soft)?;
    Ok(Stage1Result {
        model,
        initial_labels,
        epoch_losses,
        labeling_failures,
    })
}

/// Alternates supervised minibatch updates on the current pseudo-labels
/// with an end-of-epoch transport refresh.
///
/// Each epoch first consumes every bag exactly once in shuffled whole-bag
/// minibatches, then rebuilds the pseudo-labels according to
/// [`TrainConfig::ot_mode`]. A bag whose refresh solve fails to converge
/// keeps its previous labels and is counted in
/// [`RunMetrics::refresh_failures`]. With `stage2_epochs = 0` the model and
/// labels pass through unchanged.
pub fn stage2_plot(
    model: MlpClassifier,
    llp: &LlpDataset,
    test: Option<&LabeledDataset>,
    initial_labels: &PseudoLabelMatrix,
    cfg: &TrainConfig,
) -> Result<Stage2Result> {
    cfg.validate()?;
    check_model_against_data(&model, llp)?;
    check_labels_against_data(initial_labels, llp)?;
    let start = Instant::now();
    let mut model = model;
    let mut targets: Vec<Array2<f64>> = initial_labels.blocks().to_vec();
    // Fresh soft plans drive the two refined-accuracy diagnostics; the
    // ensemble history starts from the stage-one labels, which are the
    // first soft plans of the run.
    let mut latest_soft: Vec<Array2<f64>> = initial_labels.blocks().to_vec();
    let mut history: Vec<Vec<Array2<f64>>> = initial_labels
        .blocks()
        .iter()
        .map(|b| vec![b.clone()])
        .collect();
    let mut records = Vec::with_capacity(cfg.stage2_epochs);
    let mut refresh_failures = 0usize;
    let mut opt = AdamState::new(&model, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2)?;
    for epoch in 1..=cfg.stage2_epochs {
        opt.set_learning_rate(scheduled_lr(cfg, epoch))?;
        let order = shuffled_bag_order(
            llp.num_bags(),
            derive_seed(cfg.seed, STREAM_STAGE2, epoch as u64),
        );
        let mut total_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.minibatch_bags).enumerate() {
            let (x, t) = assemble_batch(llp, &targets, chunk)?;
            let (x, t) = if cfg.use_mixup {
                mixup(
                    &x,
                    &t,
                    cfg.mixup_alpha,
                    derive_seed(
                        cfg.seed,
                        STREAM_MIXUP,
                        (epoch * 100_003 + batch_idx) as u64,
                    ),
                )?
            } else {
                (x, t)
            };
            let out = supervised_loss(&model, &x, &t, cfg)?;
            guard_finite(out.value, "supervised loss", epoch)?;
            adam_step(&mut model, &out.grads, &mut opt)?;
            total_loss += out.value;
            batches += 1;
        }

        if cfg.ot_mode != OtMode::None {
            let posts = bag_posteriors(&model, llp)?;
            let fresh = solve_bags_soft(&posts, llp, cfg)?;
            let scfg = cfg.sinkhorn();
            for (i, assignment) in fresh.into_iter().enumerate() {
                if !assignment.converged {
                    refresh_failures += 1;
                    continue;
                }
                latest_soft[i] = assignment.block.clone();
                history[i].push(assignment.block);
                if history[i].len() > cfg.ensemble_window {
                    history[i].remove(0);
                }
                targets[i] = match cfg.ot_mode {
                    OtMode::Soft => ensemble_average(&history[i], cfg.ensemble_window)?,
                    OtMode::Hard => {
                        assign_hard(&ensemble_average(&history[i], cfg.ensemble_window)?)
                    }
                    OtMode::HardExact => {
                        assign_hard_exact(&posts[i], llp.bags()[i].proportions(), &scfg)?.block
                    }
                    OtMode::None => unreachable!("refresh skipped for OtMode::None"),
                };
            }
        }

        let train_eval = evaluate(&model, llp.parent())?;
        let test_accuracy = match test {
            Some(data) => evaluate(&model, data)?.accuracy,
            None => f64::NAN,
        };
        let ensembles: Vec<Array2<f64>> = history
            .iter()
            .map(|h| ensemble_average(h, cfg.ensemble_window))
            .collect::<Result<_>>()?;
        records.push(EpochRecord {
            epoch,
            train_posterior_accuracy: train_eval.accuracy,
            refined_accuracy: blocks_accuracy(&latest_soft, llp)?,
            ensemble_accuracy: blocks_accuracy(&ensembles, llp)?,
            test_accuracy,
            train_loss: total_loss / batches.max(1) as f64,
        });
    }
    let final_labels = PseudoLabelMatrix::new(targets.clone(), classify_mode(&targets))?;
    Ok(Stage2Result {
        model,
        metrics: RunMetrics {
            records,
            wall_time: start.elapsed(),
            refresh_failures,
        },
        final_labels,
    })
}

/// Single-loop variant: alternate a full labeling pass with a few
/// full-batch cross-entropy epochs until the stacked plans move less than
/// `outer_tol` in Frobenius norm, or [`PEOT_MAX_OUTER`] iterations elapse.
///
/// The movement check runs right after each labeling pass, so an infinite
/// tolerance stops the loop before any training happens.
pub fn peot_loop(
    model: MlpClassifier,
    llp: &LlpDataset,
    cfg: &TrainConfig,
) -> Result<PeotResult> {
    cfg.validate()?;
    check_model_against_data(&model, llp)?;
    let k = llp.num_classes();
    let mut model = model;
    let mut plans: Vec<Array2<f64>> = llp
        .bags()
        .iter()
        .map(|bag| Array2::from_elem((k, bag.size()), 1.0 / (k * bag.size()) as f64))
        .collect();
    let mut trace = vec![plans.clone()];
    let mut deltas = Vec::new();
    let mut converged = false;
    let mut iterations = 0usize;
    let mut labeling_failures = 0usize;
    let all_bags: Vec<usize> = (0..llp.num_bags()).collect();
    for _ in 0..PEOT_MAX_OUTER {
        iterations += 1;
        let (blocks, failures) = label_all_bags_soft(&model, llp, cfg)?;
        labeling_failures += failures;
        let new_plans: Vec<Array2<f64>> = blocks
            .iter()
            .zip(llp.bags())
            .map(|(block, bag)| block / bag.size() as f64)
            .collect();
        deltas.push(frobenius_distance(&plans, &new_plans));
        trace.push(new_plans.clone());
        plans = new_plans;
        if deltas[iterations - 1] < cfg.outer_tol {
            converged = true;
            break;
        }
        let (x, t) = assemble_batch(llp, &blocks, &all_bags)?;
        let mut opt = AdamState::new(&model, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2)?;
        for _ in 0..cfg.peot_inner_epochs {
            let out = ce_loss(&model, &x, &t)?;
            guard_finite(out.value, "inner cross-entropy", iterations)?;
            adam_step(&mut model, &out.grads, &mut opt)?;
        }
    }
    Ok(PeotResult {
        model,
        deltas,
        trace,
        converged,
        iterations,
        labeling_failures,
    })
}

fn check_model_against_data(model: &MlpClassifier, llp: &LlpDataset) -> Result<()> {
    if llp.num_bags() == 0 {
        return Err(Error::EmptyInput("dataset with zero bags"));
    }
    if model.input_dim() != llp.features().ncols() {
        return Err(Error::ShapeMismatch {
            context: "model input vs bagged features",
            expected: format!("{}", model.input_dim()),
            got: format!("{}", llp.features().ncols()),
        });
    }
    if model.num_classes() != llp.num_classes() {
        return Err(Error::ShapeMismatch {
            context: "model classes vs bagged classes",
            expected: format!("{}", model.num_classes()),
            got: format!("{}", llp.num_classes()),
        });
    }
    Ok(())
}

fn check_labels_against_data(labels: &PseudoLabelMatrix, llp: &LlpDataset) -> Result<()> {
    if labels.num_bags() != llp.num_bags() {
        return Err(Error::ShapeMismatch {
            context: "pseudo-label bags vs dataset bags",
            expected: format!("{}", llp.num_bags()),
            got: format!("{}", labels.num_bags()),
        });
    }
    for (block, bag) in labels.blocks().iter().zip(llp.bags()) {
        if block.nrows() != llp.num_classes() || block.ncols() != bag.size() {
            return Err(Error::ShapeMismatch {
                context: "pseudo-label block vs bag",
                expected: format!("{}x{}", llp.num_classes(), bag.size()),
                got: format!("{}x{}", block.nrows(), block.ncols()),
            });
        }
    }
    Ok(())
}

fn guard_finite(value: f64, what: &str, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!(
            "{what} became {value} at epoch {epoch}; lower the learning rate or check the data scale"
        )))
    }
}

fn supervised_loss(
    model: &MlpClassifier,
    x: &Array2<f64>,
    t: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<LossOutput> {
    match cfg.loss_mode {
        LossMode::Ce => ce_loss(model, x, t),
        LossMode::Sce => sce_loss(model, x, t, cfg.sce_alpha, cfg.sce_beta),
    }
}

/// Learning rate for a one-based epoch under the halving schedule.
fn scheduled_lr(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.lr_halve_every == 0 {
        cfg.learning_rate
    } else {
        cfg.learning_rate * 0.5f64.powi(((epoch - 1) / cfg.lr_halve_every) as i32)
    }
}

fn shuffled_bag_order(num_bags: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_bags).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Stacks the instances and current targets of the given bags, in bag order
/// then within-bag order.
fn assemble_batch(
    llp: &LlpDataset,
    targets: &[Array2<f64>],
    bag_indices: &[usize],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let rows: usize = bag_indices.iter().map(|&i| llp.bags()[i].size()).sum();
    let mut x = Array2::zeros((rows, llp.features().ncols()));
    let mut t = Array2::zeros((rows, llp.num_classes()));
    let mut r = 0usize;
    for &bi in bag_indices {
        let bag = &llp.bags()[bi];
        let block = &targets[bi];
        if block.ncols() != bag.size() {
            return Err(Error::ShapeMismatch {
                context: "target block vs bag",
                expected: format!("{}", bag.size()),
                got: format!("{}", block.ncols()),
            });
        }
        for (col, &inst) in bag.instance_indices().iter().enumerate() {
            x.row_mut(r).assign(&llp.features().row(inst));
            t.row_mut(r).assign(&block.column(col));
            r += 1;
        }
    }
    Ok((x, t))
}

/// Per-bag posteriors of the current model, one forward pass for the whole
/// dataset.
fn bag_posteriors(model: &MlpClassifier, llp: &LlpDataset) -> Result<Vec<BagPosterior>> {
    let probs = model.forward(llp.features())?;
    let k = llp.num_classes();
    llp.bags()
        .iter()
        .map(|bag| {
            let mut block = Array2::zeros((k, bag.size()));
            for (col, &inst) in bag.instance_indices().iter().enumerate() {
                for class in 0..k {
                    block[[class, col]] = probs[[inst, class]];
                }
            }
            BagPosterior::new(block)
        })
        .collect()
}

/// Entropic labeling of every bag, fanned out over worker threads and
/// joined by bag index so the result is independent of thread count.
fn solve_bags_soft(
    posts: &[BagPosterior],
    llp: &LlpDataset,
    cfg: &TrainConfig,
) -> Result<Vec<SoftAssignment>> {
    let scfg = cfg.sinkhorn();
    let results = fan_out(posts.len(), resolve_threads(cfg), |i| {
        assign_soft(&posts[i], llp.bags()[i].proportions(), &scfg)
    });
    results.into_iter().collect()
}

/// Labels every bag and reports how many solves hit the iteration cap.
fn label_all_bags_soft(
    model: &MlpClassifier,
    llp: &LlpDataset,
    cfg: &TrainConfig,
) -> Result<(Vec<Array2<f64>>, usize)> {
    let posts = bag_posteriors(model, llp)?;
    let assignments = solve_bags_soft(&posts, llp, cfg)?;
    let failures = assignments.iter().filter(|a| !a.converged).count();
    Ok((assignments.into_iter().map(|a| a.block).collect(), failures))
}

fn resolve_threads(cfg: &TrainConfig) -> usize {
    if cfg.num_threads > 0 {
        cfg.num_threads
    } else {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    }
}

/// Runs `f(0..count)` across at most `threads` workers and returns the
/// results in index order.
fn fan_out<T, F>(count: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = threads.max(1).min(count.max(1));
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let chunk = count.div_ceil(workers);
    let mut slots: Vec<Option<T>> = std::iter::repeat_with(|| None).take(count).collect();
    std::thread::scope(|scope| {
        for (w, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (offset, slot) in slot_chunk.iter_mut().enumerate() {
                    *slot = Some(f(w * chunk + offset));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every fan-out slot is filled before the scope ends"))
        .collect()
}

/// Frobenius distance between two stacked block lists.
fn frobenius_distance(a: &[Array2<f64>], b: &[Array2<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            x.iter()
                .zip(y.iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Hard if every column of every block is exactly one-hot, soft otherwise.
fn classify_mode(blocks: &[Array2<f64>]) -> AssignmentMode {
    let one_hot = blocks.iter().all(|block| {
        block.columns().into_iter().all(|col| {
            col.iter().all(|&v| v == 0.0 || v == 1.0) && col.sum() == 1.0
        })
    });
    if one_hot {
        AssignmentMode::Hard
    } else {
        AssignmentMode::Soft
    }
}
