//! End-to-end behavior of the two training stages and the alternating
//! refinement loop: loss decay, trace bookkeeping, and run determinism.

use plot_core::data::{make_bags, two_moons};
use plot_core::model::MlpClassifier;
use plot_core::pipeline::{
    peot_loop, stage1_dllp, stage2_plot, OtMode, TrainConfig, PEOT_MAX_OUTER,
};

fn small_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = seed;
    cfg
}

/// Proportion-matching training on bagged two-moons drives the bag-level
/// loss down by at least an order of magnitude over 200 epochs. Individual
/// initializations can start almost proportion-matched by luck, so the
/// ratio is taken over the pooled first and last epochs of three seeds.
#[test]
fn stage_one_loss_drops_by_an_order_of_magnitude() {
    let mut first_sum = 0.0;
    let mut last_sum = 0.0;
    for seed in [1u64, 2, 3] {
        let data = two_moons(2000, 0.1, seed).unwrap();
        let llp = make_bags(data, 50, seed).unwrap();
        let mut cfg = small_config(seed);
        cfg.stage1_epochs = 200;
        let model = MlpClassifier::new(&[2, 32, 32, 32, 2], seed).unwrap();
        let out = stage1_dllp(model, &llp, &cfg).unwrap();
        assert_eq!(out.epoch_losses.len(), 200);
        assert_eq!(out.labeling_failures, 0);
        first_sum += out.epoch_losses[0];
        last_sum += *out.epoch_losses.last().unwrap();
    }
    assert!(
        last_sum * 10.0 <= first_sum,
        "expected a 10x pooled loss decrease, got {first_sum} -> {last_sum}"
    );
}

/// Every reported movement value equals the Frobenius distance between the
/// two coupling snapshots that bracket it, and convergence is declared
/// exactly when the last movement drops below the tolerance.
#[test]
fn alternating_refinement_deltas_match_the_trace() {
    let data = two_moons(60, 0.1, 11).unwrap();
    let llp = make_bags(data, 10, 11).unwrap();
    let mut cfg = small_config(11);
    cfg.outer_tol = 1e-3;
    let model = MlpClassifier::new(&[2, 8, 2], 11).unwrap();
    let out = peot_loop(model, &llp, &cfg).unwrap();

    assert_eq!(out.trace.len(), out.deltas.len() + 1);
    assert_eq!(out.iterations, out.deltas.len());
    assert!(out.iterations <= PEOT_MAX_OUTER);
    for (k, &delta) in out.deltas.iter().enumerate() {
        let before = &out.trace[k];
        let after = &out.trace[k + 1];
        let oracle = before
            .iter()
            .zip(after)
            .map(|(a, b)| {
                a.iter()
                    .zip(b.iter())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt();
        assert!(
            (delta - oracle).abs() <= 1e-12,
            "movement {k}: reported {delta}, recomputed {oracle}"
        );
    }
    if out.converged {
        assert!(*out.deltas.last().unwrap() < cfg.outer_tol);
    } else {
        assert_eq!(out.iterations, PEOT_MAX_OUTER);
    }
    // Each snapshot stays a valid coupling scale: entries in a bag sum to one.
    for snapshot in &out.trace {
        for plan in snapshot {
            let total: f64 = plan.iter().sum();
            assert!((total - 1.0).abs() <= 1e-9);
        }
    }
}

/// Two runs from the same seed, data, and configuration agree bitwise in
/// every diagnostic and in the final parameters.
#[test]
fn identical_runs_produce_identical_histories() {
    let run = || {
        let data = two_moons(200, 0.1, 3).unwrap();
        let llp = make_bags(data, 20, 3).unwrap();
        let test = two_moons(100, 0.1, 503).unwrap();
        let mut cfg = small_config(3);
        cfg.stage1_epochs = 5;
        cfg.stage2_epochs = 5;
        cfg.ot_mode = OtMode::Hard;
        let model = MlpClassifier::new(&[2, 16, 2], 3).unwrap();
        let s1 = stage1_dllp(model, &llp, &cfg).unwrap();
        let s2 = stage2_plot(s1.model, &llp, Some(&test), &s1.initial_labels, &cfg).unwrap();
        (s1.epoch_losses, s2)
    };
    let (losses_a, s2_a) = run();
    let (losses_b, s2_b) = run();

    assert_eq!(losses_a, losses_b);
    assert_eq!(s2_a.metrics.records.len(), s2_b.metrics.records.len());
    for (ra, rb) in s2_a.metrics.records.iter().zip(&s2_b.metrics.records) {
        assert_eq!(ra.epoch, rb.epoch);
        assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
        assert_eq!(
            ra.train_posterior_accuracy.to_bits(),
            rb.train_posterior_accuracy.to_bits()
        );
        assert_eq!(
            ra.refined_accuracy.to_bits(),
            rb.refined_accuracy.to_bits()
        );
        assert_eq!(
            ra.ensemble_accuracy.to_bits(),
            rb.ensemble_accuracy.to_bits()
        );
        assert_eq!(ra.test_accuracy.to_bits(), rb.test_accuracy.to_bits());
    }
    for (wa, wb) in s2_a.model.weights().iter().zip(s2_b.model.weights()) {
        assert_eq!(wa, wb);
    }
    for (ba, bb) in s2_a.model.biases().iter().zip(s2_b.model.biases()) {
        assert_eq!(ba, bb);
    }
    for (qa, qb) in s2_a
        .final_labels
        .blocks()
        .iter()
        .zip(s2_b.final_labels.blocks())
    {
        assert_eq!(qa, qb);
    }
}

/// The thread count is a performance knob only: forcing different worker
/// counts leaves every diagnostic bitwise unchanged.
#[test]
fn worker_count_does_not_change_results() {
    let run = |threads: usize| {
        let data = two_moons(120, 0.1, 9).unwrap();
        let llp = make_bags(data, 12, 9).unwrap();
        let mut cfg = small_config(9);
        cfg.stage1_epochs = 3;
        cfg.stage2_epochs = 4;
        cfg.num_threads = threads;
        let model = MlpClassifier::new(&[2, 8, 2], 9).unwrap();
        let s1 = stage1_dllp(model, &llp, &cfg).unwrap();
        let s2 = stage2_plot(s1.model, &llp, None, &s1.initial_labels, &cfg).unwrap();
        s2
    };
    let base = run(1);
    for threads in [2, 5] {
        let other = run(threads);
        for (ra, rb) in base.metrics.records.iter().zip(&other.metrics.records) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(
                ra.refined_accuracy.to_bits(),
                rb.refined_accuracy.to_bits()
            );
        }
        for (wa, wb) in base.model.weights().iter().zip(other.model.weights()) {
            assert_eq!(wa, wb);
        }
    }
}
