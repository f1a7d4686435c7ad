//! The five subcommands: generate, train, sweep-lambda, plot, evaluate.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use plot_core::data::{
    load_csv, make_bags, save_bag_partition, save_csv, two_moons, LabeledDataset, LlpDataset,
};
use plot_core::model::{load_checkpoint, save_checkpoint, MlpClassifier};
use plot_core::ot::{
    exact_ot, sinkhorn, transport_cost, CostMatrix, DiscreteMeasure, SinkhornConfig,
};
use plot_core::pipeline::{
    evaluate, pseudo_label_accuracy, stage1_dllp, stage2_plot, Stage1Result, Stage2Result,
    TrainConfig,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artifacts::{
    read_metrics, run_path, write_json, write_metrics, ArtifactList, DatasetSummary,
    Stage1Summary, Stage2Summary, Summary, BAGS_FILE, BOUNDARY_FILE, CHECKPOINT_FILE,
    CURVES_FILE, DATASET_FILE, EVALUATION_FILE, LABEL_COLUMN, METRICS_FILE, SUMMARY_FILE,
    SWEEP_FILE, TEST_FILE,
};
use crate::config::{ConfigError, DatasetPlan, ConfigEcho, Resolved};
use crate::svg::{curve_chart, region_chart, Series};
use crate::AppError;

/// Train features/labels plus an optional held-out set, built per plan.
struct Materialized {
    llp: LlpDataset,
    test: Option<LabeledDataset>,
}

fn materialize(plan: &DatasetPlan, seed: u64) -> Result<Materialized, AppError> {
    let (train, test) = match plan {
        DatasetPlan::TwoMoons {
            n, noise, test_n, ..
        } => {
            let train = two_moons(*n, *noise, seed)?;
            let test = if *test_n > 0 {
                Some(two_moons(*test_n, *noise, seed + 500)?)
            } else {
                None
            };
            (train, test)
        }
        DatasetPlan::Csv {
            path,
            label_column,
            test_path,
            ..
        } => {
            let (train, _) = load_csv(path, label_column)?;
            let test = match test_path {
                Some(p) => Some(load_csv(p, label_column)?.0),
                None => None,
            };
            (train, test)
        }
    };
    let llp = make_bags(train, plan.bag_size(), seed)
        .map_err(|e| AppError::Config(ConfigError(format!("dataset.bag_size: {e}"))))?;
    Ok(Materialized { llp, test })
}

fn export_dataset(m: &Materialized, dir: &Path) -> Result<(), AppError> {
    save_csv(m.llp.parent(), &run_path(dir, DATASET_FILE), LABEL_COLUMN)?;
    save_bag_partition(&m.llp, &run_path(dir, BAGS_FILE))?;
    if let Some(test) = &m.test {
        save_csv(test, &run_path(dir, TEST_FILE), LABEL_COLUMN)?;
    }
    Ok(())
}

/// Builds the dataset and bag partition and writes them out, printing a
/// per-class summary of the bag proportions.
pub fn cmd_generate(resolved: &Resolved, out: &Path) -> Result<(), AppError> {
    fs::create_dir_all(out)?;
    let m = materialize(&resolved.dataset, resolved.train.seed)?;
    export_dataset(&m, out)?;

    let llp = &m.llp;
    println!(
        "wrote {} bags of size {} to {}",
        llp.num_bags(),
        resolved.dataset.bag_size(),
        out.display()
    );
    for class in 0..llp.num_classes() {
        let shares: Vec<f64> = llp.bags().iter().map(|b| b.proportions()[class]).collect();
        let min = shares.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = shares.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = shares.iter().sum::<f64>() / shares.len() as f64;
        println!("class {class} share across bags: min {min:.4} mean {mean:.4} max {max:.4}");
    }
    Ok(())
}

fn none_if_nan(x: f64) -> Option<f64> {
    if x.is_nan() {
        None
    } else {
        Some(x)
    }
}

/// Runs the two training stages (either may be skipped by setting its epoch
/// count to zero) and writes metrics, summary, checkpoint, and data files.
pub fn cmd_train(resolved: &Resolved, out: &Path) -> Result<(), AppError> {
    fs::create_dir_all(out)?;
    let cfg = &resolved.train;
    let m = materialize(&resolved.dataset, cfg.seed)?;
    export_dataset(&m, out)?;
    let llp = &m.llp;

    let mut dims = vec![llp.features().ncols()];
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(llp.num_classes());
    let model = MlpClassifier::new(&dims, cfg.seed)?;

    let s1: Stage1Result = stage1_dllp(model, llp, cfg)?;
    let stage1_label_accuracy = pseudo_label_accuracy(&s1.initial_labels, llp)?;
    let stage1_skipped = cfg.stage1_epochs == 0;
    if !stage1_skipped {
        println!(
            "stage 1: {} epochs, final bag loss {:.6}, pseudo-label accuracy {:.4}",
            s1.epoch_losses.len(),
            s1.epoch_losses.last().copied().unwrap_or(f64::NAN),
            stage1_label_accuracy
        );
    }

    let stage2_skipped = cfg.stage2_epochs == 0;
    let (final_model, s2): (MlpClassifier, Option<Stage2Result>) = if stage2_skipped {
        (s1.model.clone(), None)
    } else {
        let out2 = stage2_plot(s1.model.clone(), llp, m.test.as_ref(), &s1.initial_labels, cfg)?;
        (out2.model.clone(), Some(out2))
    };

    let records = s2.as_ref().map(|s| s.metrics.records.as_slice()).unwrap_or(&[]);
    write_metrics(&run_path(out, METRICS_FILE), &s1.epoch_losses, records)?;
    save_checkpoint(&final_model, &run_path(out, CHECKPOINT_FILE))?;

    let stage2_summary = match &s2 {
        None => Stage2Summary {
            skipped: true,
            epochs: 0,
            final_train_accuracy: None,
            final_test_accuracy: None,
            final_label_accuracy: None,
            refresh_failures: 0,
            sinkhorn_non_convergence: s1.labeling_failures > 0,
        },
        Some(s) => {
            let last = s.metrics.records.last();
            let summary = Stage2Summary {
                skipped: false,
                epochs: s.metrics.records.len(),
                final_train_accuracy: last.map(|r| r.train_posterior_accuracy),
                final_test_accuracy: last.and_then(|r| none_if_nan(r.test_accuracy)),
                final_label_accuracy: Some(pseudo_label_accuracy(&s.final_labels, llp)?),
                refresh_failures: s.metrics.refresh_failures,
                sinkhorn_non_convergence: s.metrics.refresh_failures > 0
                    || s1.labeling_failures > 0,
            };
            println!(
                "stage 2: {} epochs, final train accuracy {:.4}{}",
                summary.epochs,
                summary.final_train_accuracy.unwrap_or(f64::NAN),
                match summary.final_test_accuracy {
                    Some(t) => format!(", test accuracy {t:.4}"),
                    None => String::new(),
                }
            );
            summary
        }
    };

    let summary = Summary {
        dataset: DatasetSummary {
            plan: resolved.dataset.clone(),
            num_instances: llp.features().nrows(),
            num_bags: llp.num_bags(),
            num_classes: llp.num_classes(),
            test_instances: m.test.as_ref().map(|t| t.len()),
        },
        config: ConfigEcho::from_train(cfg),
        stage1: Stage1Summary {
            skipped: stage1_skipped,
            epochs: s1.epoch_losses.len(),
            final_loss: s1.epoch_losses.last().copied(),
            label_accuracy: stage1_label_accuracy,
            labeling_failures: s1.labeling_failures,
        },
        stage2: stage2_summary,
        artifacts: ArtifactList {
            metrics: METRICS_FILE.into(),
            checkpoint: CHECKPOINT_FILE.into(),
            dataset: DATASET_FILE.into(),
            bags: BAGS_FILE.into(),
            test: m.test.as_ref().map(|_| TEST_FILE.into()),
        },
    };
    write_json(&run_path(out, SUMMARY_FILE), &summary)?;
    println!("artifacts written to {}", out.display());
    Ok(())
}

/// Regularization sweep: for each strength, the mean optimality gap of the
/// entropic solver against the exact solver on a fixed random suite, plus
/// the final accuracy of one short training run.
pub fn cmd_sweep_lambda(
    resolved: &Resolved,
    lambdas: &[f64],
    out: &Path,
) -> Result<(), AppError> {
    if lambdas.is_empty() {
        return Err(AppError::Config(ConfigError(
            "--lambdas requires at least one value".into(),
        )));
    }
    for &l in lambdas {
        if !(l.is_finite() && l > 0.0) {
            return Err(AppError::Config(ConfigError(format!(
                "--lambdas: every value must be a positive real, got {l}"
            ))));
        }
    }
    fs::create_dir_all(out)?;

    // Fixed suite of random transport instances; the same instances are
    // reused for every strength so the gap column is comparable.
    let mut rng = ChaCha8Rng::seed_from_u64(resolved.train.seed.wrapping_add(0x9E3779B97F4A7C15));
    let mut suite = Vec::new();
    for _ in 0..20 {
        let n = rng.random_range(2..=5);
        let m = rng.random_range(2..=6);
        let a = random_measure(&mut rng, n);
        let b = random_measure(&mut rng, m);
        let cost =
            CostMatrix::new(Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..1.0)))?;
        let (_, exact_cost) = exact_ot(&cost, &a, &b)?;
        suite.push((cost, a, b, exact_cost));
    }

    let mut rows = Vec::new();
    for &lambda in lambdas {
        let scfg = SinkhornConfig::new(lambda)
            .with_log_domain(true)
            .with_tol(1e-9)
            .with_max_iter(500_000);
        let mut gap_sum = 0.0;
        for (cost, a, b, exact_cost) in &suite {
            let sol = sinkhorn(cost, a, b, &scfg)?;
            gap_sum += transport_cost(&sol.coupling, cost)? - exact_cost;
        }
        let mean_gap = gap_sum / suite.len() as f64;

        let accuracy = short_training_run(&resolved.train, lambda)?;
        println!("lambda {lambda}: mean gap {mean_gap:.6}, accuracy {accuracy:.4}");
        rows.push((lambda, mean_gap, accuracy));
    }

    let mut csv = String::from("lambda,mean_gap,final_accuracy\n");
    for (lambda, gap, acc) in &rows {
        csv.push_str(&format!("{lambda},{gap},{acc}\n"));
    }
    fs::write(run_path(out, SWEEP_FILE), csv)?;
    println!("sweep table written to {}", run_path(out, SWEEP_FILE).display());
    Ok(())
}

fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> DiscreteMeasure {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    DiscreteMeasure::new(raw.into_iter().map(|w| w / total).collect())
        .expect("positive normalized weights form a measure")
}

fn short_training_run(base: &TrainConfig, lambda: f64) -> Result<f64, AppError> {
    let mut cfg = base.clone();
    cfg.lambda = lambda;
    cfg.stage1_epochs = 30;
    cfg.stage2_epochs = 10;
    let data = two_moons(200, 0.1, cfg.seed)?;
    let llp = make_bags(data, 20, cfg.seed)?;
    let test = two_moons(100, 0.1, cfg.seed + 500)?;
    let mut dims = vec![2];
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(2);
    let model = MlpClassifier::new(&dims, cfg.seed)?;
    let s1 = stage1_dllp(model, &llp, &cfg)?;
    let s2 = stage2_plot(s1.model, &llp, Some(&test), &s1.initial_labels, &cfg)?;
    Ok(s2
        .metrics
        .records
        .last()
        .map(|r| r.test_accuracy)
        .unwrap_or(f64::NAN))
}

/// Emits accuracy-vs-epoch curves and, for 2-D data with a checkpoint, a
/// decision-region raster. Curves are always attempted first so they still
/// appear when the boundary cannot be drawn.
pub fn cmd_plot(run_dir: &Path) -> Result<(), AppError> {
    let metrics =
        read_metrics(&run_path(run_dir, METRICS_FILE)).map_err(AppError::Runtime)?;

    let mut series = Vec::new();
    let curves_path = run_path(run_dir, CURVES_FILE);
    if !metrics.stage2.is_empty() {
        let collect = |f: fn(&crate::artifacts::Stage2Row) -> Option<f64>| -> Vec<(f64, f64)> {
            metrics
                .stage2
                .iter()
                .filter_map(|r| f(r).map(|v| (r.epoch as f64, v)))
                .collect()
        };
        let named: [(&str, Vec<(f64, f64)>); 4] = [
            ("train (posterior)", collect(|r| r.train_posterior_accuracy)),
            ("train (refined labels)", collect(|r| r.refined_accuracy)),
            ("train (ensemble labels)", collect(|r| r.ensemble_accuracy)),
            ("test", collect(|r| r.test_accuracy)),
        ];
        for (name, points) in named {
            if !points.is_empty() {
                series.push(Series { name, points });
            }
        }
        let svg = curve_chart("accuracy by epoch", "accuracy", (0.0, 1.0), &series);
        fs::write(&curves_path, svg)?;
    } else if !metrics.stage1_losses.is_empty() {
        let points: Vec<(f64, f64)> = metrics
            .stage1_losses
            .iter()
            .map(|&(e, l)| (e as f64, l))
            .collect();
        let top = points.iter().map(|p| p.1).fold(0.0f64, f64::max) * 1.1;
        let svg = curve_chart(
            "bag loss by epoch",
            "loss",
            (0.0, if top > 0.0 { top } else { 1.0 }),
            &[Series {
                name: "bag loss",
                points,
            }],
        );
        fs::write(&curves_path, svg)?;
    } else {
        return Err(AppError::Runtime(format!(
            "metrics file {} contains no epochs",
            run_path(run_dir, METRICS_FILE).display()
        )));
    }
    println!("wrote {}", curves_path.display());

    let ckpt_path = run_path(run_dir, CHECKPOINT_FILE);
    let data_path = run_path(run_dir, DATASET_FILE);
    if !ckpt_path.exists() || !data_path.exists() {
        eprintln!("no checkpoint and dataset pair in run directory; skipping decision-region plot");
        return Ok(());
    }
    let model = load_checkpoint(&ckpt_path)?;
    let (data, _) = load_csv(&data_path, LABEL_COLUMN)?;
    if data.dim() != 2 {
        eprintln!(
            "decision-region plot requires 2-D features, dataset has {} dimensions; curves emitted without it",
            data.dim()
        );
        return Ok(());
    }

    const RESOLUTION: usize = 200;
    let f = data.features();
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in f.axis_iter(Axis(0)) {
        x_min = x_min.min(row[0]);
        x_max = x_max.max(row[0]);
        y_min = y_min.min(row[1]);
        y_max = y_max.max(row[1]);
    }
    let pad_x = (x_max - x_min).max(1e-9) * 0.05;
    let pad_y = (y_max - y_min).max(1e-9) * 0.05;
    let (x_min, x_max) = (x_min - pad_x, x_max + pad_x);
    let (y_min, y_max) = (y_min - pad_y, y_max + pad_y);

    let mut grid_points = Array2::zeros((RESOLUTION * RESOLUTION, 2));
    for row in 0..RESOLUTION {
        let y = y_min + (y_max - y_min) * (row as f64 + 0.5) / RESOLUTION as f64;
        for col in 0..RESOLUTION {
            let x = x_min + (x_max - x_min) * (col as f64 + 0.5) / RESOLUTION as f64;
            grid_points[[row * RESOLUTION + col, 0]] = x;
            grid_points[[row * RESOLUTION + col, 1]] = y;
        }
    }
    let probs = model.forward(&grid_points)?;
    let grid: Vec<usize> = probs
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    let points: Vec<(f64, f64, usize)> = f
        .axis_iter(Axis(0))
        .zip(data.eval_labels())
        .map(|(row, &label)| (row[0], row[1], label))
        .collect();
    let svg = region_chart(
        "decision regions",
        &grid,
        RESOLUTION,
        (x_min, x_max, y_min, y_max),
        &points,
    );
    let boundary_path = run_path(run_dir, BOUNDARY_FILE);
    fs::write(&boundary_path, svg)?;
    println!("wrote {}", boundary_path.display());
    Ok(())
}

/// Scores a saved checkpoint on a dataset (explicit path, or the run's
/// held-out then training CSV) and writes the result next to the run.
pub fn cmd_evaluate(
    run_dir: &Path,
    data: Option<&Path>,
    label_column: &str,
) -> Result<(), AppError> {
    let ckpt_path = run_path(run_dir, CHECKPOINT_FILE);
    if !ckpt_path.exists() {
        return Err(AppError::Runtime(format!(
            "checkpoint not found: {}",
            ckpt_path.display()
        )));
    }
    let model = load_checkpoint(&ckpt_path)?;

    let data_path: PathBuf = match data {
        Some(p) => p.to_path_buf(),
        None => {
            let test = run_path(run_dir, TEST_FILE);
            let train = run_path(run_dir, DATASET_FILE);
            if test.exists() {
                test
            } else if train.exists() {
                train
            } else {
                return Err(AppError::Runtime(format!(
                    "no dataset found in {}: looked for {TEST_FILE} and {DATASET_FILE}",
                    run_dir.display()
                )));
            }
        }
    };
    let (dataset, _) = load_csv(&data_path, label_column)?;
    let eval = evaluate(&model, &dataset)?;

    #[derive(serde::Serialize)]
    struct EvalOut {
        data: String,
        instances: usize,
        accuracy: f64,
        per_class_accuracy: Vec<Option<f64>>,
        confusion: Vec<Vec<usize>>,
    }
    let out = EvalOut {
        data: data_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| data_path.display().to_string()),
        instances: dataset.len(),
        accuracy: eval.accuracy,
        per_class_accuracy: eval.per_class_accuracy.iter().map(|&a| none_if_nan(a)).collect(),
        confusion: eval
            .confusion
            .axis_iter(Axis(0))
            .map(|row| row.to_vec())
            .collect(),
    };
    write_json(&run_path(run_dir, EVALUATION_FILE), &out)?;

    println!("accuracy: {:.4} on {} instances", eval.accuracy, dataset.len());
    for (class, acc) in eval.per_class_accuracy.iter().enumerate() {
        if acc.is_nan() {
            println!("class {class} recall: n/a (no instances)");
        } else {
            println!("class {class} recall: {acc:.4}");
        }
    }
    Ok(())
}
