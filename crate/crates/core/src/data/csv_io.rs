//! Labeled CSV: a header row, an integer `label` column, every other column a
//! numeric feature in `[0, 1]`.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| Error::InvalidDataset(format!("{}: no `label` column", path.display())))?;
    let dim = headers.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if j == label_col {
                let l = field
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidDataset(format!("row {}: bad label `{field}`", line + 1)))?;
                labels.push(l);
            } else {
                let v = field
                    .parse::<f32>()
                    .map_err(|_| Error::InvalidDataset(format!("row {}: bad feature `{field}`", line + 1)))?;
                features.push(v);
            }
        }
    }
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, features, [1, 1, dim], labels, num_classes)
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = ds.feature_dim();
    let mut header: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.sample(i).iter().map(|v| v.to_string()).collect();
        row.push(ds.labels()[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
