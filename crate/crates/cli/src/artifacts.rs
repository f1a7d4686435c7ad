//! Run-directory artifacts: metrics CSV, JSON summary, and the fixed file
//! names commands agree on. Writers never embed timestamps, hostnames, or
//! other machine state, so a rerun with the same inputs is byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use plot_core::pipeline::EpochRecord;
use serde::Serialize;

use crate::config::{ConfigEcho, DatasetPlan};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const DATASET_FILE: &str = "dataset.csv";
pub const BAGS_FILE: &str = "bags.csv";
pub const TEST_FILE: &str = "test.csv";
pub const CURVES_FILE: &str = "curves.svg";
pub const BOUNDARY_FILE: &str = "boundary.svg";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const LABEL_COLUMN: &str = "label";

const METRICS_HEADER: &str =
    "stage,epoch,train_loss,train_posterior_accuracy,refined_accuracy,ensemble_accuracy,test_accuracy";

fn cell(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

/// Writes one CSV with a row per epoch: bag-loss rows for the first stage,
/// full diagnostic rows for the second.
pub fn write_metrics(
    path: &Path,
    stage1_losses: &[f64],
    stage2_records: &[EpochRecord],
) -> std::io::Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (i, loss) in stage1_losses.iter().enumerate() {
        out.push_str(&format!("1,{},{},,,,\n", i + 1, cell(*loss)));
    }
    for r in stage2_records {
        out.push_str(&format!(
            "2,{},{},{},{},{},{}\n",
            r.epoch,
            cell(r.train_loss),
            cell(r.train_posterior_accuracy),
            cell(r.refined_accuracy),
            cell(r.ensemble_accuracy),
            cell(r.test_accuracy),
        ));
    }
    fs::write(path, out)
}

/// One parsed second-stage metrics row.
#[derive(Debug, Clone)]
pub struct Stage2Row {
    pub epoch: usize,
    pub train_posterior_accuracy: Option<f64>,
    pub refined_accuracy: Option<f64>,
    pub ensemble_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Parsed metrics file: first-stage losses and second-stage rows.
#[derive(Debug, Default)]
pub struct Metrics {
    pub stage1_losses: Vec<(usize, f64)>,
    pub stage2: Vec<Stage2Row>,
}

fn parse_cell(s: &str) -> Option<f64> {
    if s.is_empty() {
        None
    } else {
        s.parse().ok()
    }
}

/// Reads a metrics CSV back. Returns an error naming the path if the file
/// is missing and a format error for rows that do not match the header.
pub fn read_metrics(path: &Path) -> Result<Metrics, String> {
    let text = fs::read_to_string(path)
        .map_err(|_| format!("metrics file not found: {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        _ => return Err(format!("malformed metrics header in {}", path.display())),
    }
    let mut metrics = Metrics::default();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(format!(
                "metrics row {} has {} fields, expected 7",
                i + 2,
                cells.len()
            ));
        }
        let epoch: usize = cells[1]
            .parse()
            .map_err(|_| format!("metrics row {}: bad epoch {:?}", i + 2, cells[1]))?;
        match cells[0] {
            "1" => {
                let loss = parse_cell(cells[2])
                    .ok_or_else(|| format!("metrics row {}: missing loss", i + 2))?;
                metrics.stage1_losses.push((epoch, loss));
            }
            "2" => metrics.stage2.push(Stage2Row {
                epoch,
                train_posterior_accuracy: parse_cell(cells[3]),
                refined_accuracy: parse_cell(cells[4]),
                ensemble_accuracy: parse_cell(cells[5]),
                test_accuracy: parse_cell(cells[6]),
            }),
            other => return Err(format!("metrics row {}: unknown stage {other:?}", i + 2)),
        }
    }
    Ok(metrics)
}

#[derive(Debug, Serialize)]
pub struct DatasetSummary {
    #[serde(flatten)]
    pub plan: DatasetPlan,
    pub num_instances: usize,
    pub num_bags: usize,
    pub num_classes: usize,
    pub test_instances: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Stage1Summary {
    pub skipped: bool,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    /// Agreement of the first-stage pseudo-labels with the held-back labels.
    pub label_accuracy: f64,
    pub labeling_failures: usize,
}

#[derive(Debug, Serialize)]
pub struct Stage2Summary {
    pub skipped: bool,
    pub epochs: usize,
    pub final_train_accuracy: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub final_label_accuracy: Option<f64>,
    pub refresh_failures: usize,
    /// True when any transport refresh hit its iteration cap; the run still
    /// completes and keeps the previous labels for those bags.
    pub sinkhorn_non_convergence: bool,
}

#[derive(Debug, Serialize)]
pub struct ArtifactList {
    pub metrics: String,
    pub checkpoint: String,
    pub dataset: String,
    pub bags: String,
    pub test: Option<String>,
}

/// Everything a finished training run reports, echoed config included.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub dataset: DatasetSummary,
    pub config: ConfigEcho,
    pub stage1: Stage1Summary,
    pub stage2: Stage2Summary,
    pub artifacts: ArtifactList,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    text.push('\n');
    fs::write(path, text)
}

pub fn run_path(dir: &Path, file: &str) -> PathBuf {
    dir.join(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            train_posterior_accuracy: 0.5,
            refined_accuracy: 0.625,
            ensemble_accuracy: 0.75,
            test_accuracy: f64::NAN,
            train_loss: 0.125,
        }
    }

    #[test]
    fn metrics_round_trip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS_FILE);
        write_metrics(&path, &[0.5, 0.25], &[record(1), record(2)]).unwrap();
        let m = read_metrics(&path).unwrap();
        assert_eq!(m.stage1_losses, vec![(1, 0.5), (2, 0.25)]);
        assert_eq!(m.stage2.len(), 2);
        assert_eq!(m.stage2[0].epoch, 1);
        assert_eq!(m.stage2[0].refined_accuracy, Some(0.625));
        assert_eq!(m.stage2[0].test_accuracy, None);
    }

    #[test]
    fn missing_metrics_error_names_the_path() {
        let err = read_metrics(Path::new("/nonexistent/metrics.csv")).unwrap_err();
        assert!(err.contains("/nonexistent/metrics.csv"), "{err}");
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS_FILE);
        std::fs::write(&path, format!("{METRICS_HEADER}\n1,1,0.5\n")).unwrap();
        assert!(read_metrics(&path).unwrap_err().contains("expected 7"));
    }

    #[test]
    fn nan_cells_serialize_as_empty() {
        assert_eq!(cell(f64::NAN), "");
        assert_eq!(cell(0.5), "0.5");
    }
}
