//! CSV ingestion and export for datasets and bag partitions.
//!
//! All files are comma-separated UTF-8 with a header row and '.' decimal
//! separator. Floats are written with Rust's shortest round-trip formatting,
//! so export → import reproduces values exactly.

use std::path::Path;

use ndarray::Array2;

use crate::data::{compute_proportions, Bag, LabeledDataset, LlpDataset};
use crate::error::{Error, Result};

/// Loads a labeled dataset from CSV. Every column except `label_column` must
/// be numeric and becomes a feature, in header order. Label values are
/// re-indexed densely (0..K−1) in order of first appearance; the returned
/// vector maps each new index back to the original label text.
pub fn load_csv(path: &Path, label_column: &str) -> Result<(LabeledDataset, Vec<String>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingColumn(label_column.to_string()))?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(feature_cols.len());
        for &col in &feature_cols {
            let cell = record.get(col).unwrap_or("");
            let value: f64 = cell.trim().parse().map_err(|_| Error::NonNumericCell {
                row: row_idx + 1,
                column: headers[col].to_string(),
                value: cell.to_string(),
            })?;
            row.push(value);
        }
        rows.push(row);
        let raw = record.get(label_idx).unwrap_or("").trim().to_string();
        let class = match label_names.iter().position(|name| *name == raw) {
            Some(k) => k,
            None => {
                label_names.push(raw);
                label_names.len() - 1
            }
        };
        labels.push(class);
    }
    if rows.is_empty() {
        return Err(Error::EmptyCsv(path.to_path_buf()));
    }

    let dim = feature_cols.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((labels.len(), dim), flat)
        .map_err(|e| Error::Domain(format!("ragged CSV rows: {e}")))?;
    let data = LabeledDataset::new(features, labels, label_names.len())?;
    Ok((data, label_names))
}

/// Writes a dataset as CSV with feature columns `x0..x{d−1}` followed by
/// `label_column` holding the integer class index.
pub fn save_csv(data: &LabeledDataset, path: &Path, label_column: &str) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push(label_column.to_string());
    writer.write_record(&header)?;
    for i in 0..data.len() {
        let mut record: Vec<String> = (0..data.dim())
            .map(|j| format!("{}", data.features()[[i, j]]))
            .collect();
        record.push(format!("{}", data.eval_labels()[i]));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Exports a bag partition as (instance_index, bag_index) rows so the same
/// bags can be reused across runs.
pub fn save_bag_partition(llp: &LlpDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["instance_index", "bag_index"])?;
    for (bag_idx, bag) in llp.bags().iter().enumerate() {
        for &i in bag.instance_indices() {
            writer.write_record([i.to_string(), bag_idx.to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Rebuilds an [`LlpDataset`] from a saved partition, recomputing bag
/// proportions from the parent's labels. Bags are ordered by their index in
/// the file; instances keep file order within each bag.
pub fn load_bag_partition(parent: LabeledDataset, path: &Path) -> Result<LlpDataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let field = |col: usize, name: &str| -> Result<usize> {
            let cell = record.get(col).unwrap_or("");
            cell.trim().parse().map_err(|_| Error::NonNumericCell {
                row: row_idx + 1,
                column: name.to_string(),
                value: cell.to_string(),
            })
        };
        pairs.push((field(0, "instance_index")?, field(1, "bag_index")?));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyCsv(path.to_path_buf()));
    }

    let max_bag = pairs.iter().map(|&(_, b)| b).max().unwrap();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); max_bag + 1];
    for &(instance, bag) in &pairs {
        members[bag].push(instance);
    }
    let mut bags = Vec::with_capacity(members.len());
    for indices in members {
        if indices.is_empty() {
            return Err(Error::Domain(
                "bag indices in partition file must be contiguous".into(),
            ));
        }
        let labels: Vec<usize> = indices
            .iter()
            .map(|&i| {
                parent.eval_labels().get(i).copied().ok_or_else(|| {
                    Error::Domain(format!(
                        "partition references instance {i} outside dataset of size {}",
                        parent.len()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let proportions = compute_proportions(&labels, parent.num_classes())?;
        bags.push(Bag::new(indices, proportions)?);
    }
    LlpDataset::new(parent, bags)
}
