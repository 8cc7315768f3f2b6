//! Generic CSV dataset format.
//!
//! A manifest `manifest.csv` with columns `path,timestamp,sampling_rate_hz,label`
//! lists one batch file per row. Batch files have a header `t,<feature names>`
//! and one row per sample. Relative paths resolve against the manifest's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, Dataset, Label, VibrationBatch};
use crate::nn::Tensor;

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    DataError::parse(path, line, e.to_string())
}

fn read_batch_file(
    path: &Path,
    timestamp: f64,
    rate: f64,
    label: Option<Label>,
) -> Result<VibrationBatch, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.len() < 2 {
        return Err(DataError::parse(path, 1, "header must be t,<features...>"));
    }
    let features = headers.len() - 1;
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != headers.len() {
            return Err(DataError::parse(
                path,
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        for field in rec.iter().skip(1) {
            let v: f32 = field
                .parse()
                .map_err(|_| DataError::parse(path, line, format!("non-numeric value {field:?}")))?;
            data.push(v);
        }
    }
    let n = data.len() / features;
    if n == 0 {
        return Err(DataError::parse(path, 1, "batch file has no samples"));
    }
    VibrationBatch::new(
        timestamp,
        Tensor::new(vec![n, features], data).expect("rows*features"),
        rate,
        label,
    )
}

/// Loads every batch listed in a manifest.
pub fn load_csv_dataset(manifest_path: &Path) -> Result<Dataset, DataError> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest_path)
        .map_err(|e| csv_err(manifest_path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(manifest_path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::parse(manifest_path, 1, format!("missing column {name:?}")))
    };
    let (c_path, c_ts, c_rate) = (col("path")?, col("timestamp")?, col("sampling_rate_hz")?);
    let c_label = headers.iter().position(|h| h == "label");

    let mut batches = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(manifest_path, e))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize, what: &str| -> Result<f64, DataError> {
            field(c)
                .parse()
                .map_err(|_| DataError::parse(manifest_path, line, format!("bad {what}")))
        };
        let ts = num(c_ts, "timestamp")?;
        let rate = num(c_rate, "sampling_rate_hz")?;
        let label = match c_label {
            Some(c) => Label::parse(field(c))
                .ok_or_else(|| DataError::parse(manifest_path, line, "bad label"))?,
            None => None,
        };
        let rel = PathBuf::from(field(c_path));
        let path = if rel.is_absolute() { rel } else { base.join(rel) };
        if !path.is_file() {
            return Err(DataError::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "batch file not found"),
            ));
        }
        batches.push(read_batch_file(&path, ts, rate, label)?);
    }
    if batches.is_empty() {
        return Err(DataError::Empty);
    }
    let source = base
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("csv")
        .to_string();
    Dataset::new(source, batches)
}

/// Writes `dataset` as a manifest plus one CSV file per batch and returns
/// the manifest path.
pub fn write_csv_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf, DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let manifest_path = dir.join("manifest.csv");
    let mut manifest = csv::Writer::from_path(&manifest_path).map_err(|e| csv_err(&manifest_path, e))?;
    manifest
        .write_record(["path", "timestamp", "sampling_rate_hz", "label"])
        .map_err(|e| csv_err(&manifest_path, e))?;
    let features = dataset.feature_count;
    let mut header = vec!["t".to_string()];
    header.extend((0..features).map(|f| format!("x{f}")));
    for (i, b) in dataset.batches().iter().enumerate() {
        let name = format!("batch_{i:05}.csv");
        let path = dir.join(&name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(&header).map_err(|e| csv_err(&path, e))?;
        let mut row = Vec::with_capacity(features + 1);
        for (r, vals) in b.samples.data().chunks(features).enumerate() {
            row.clear();
            row.push((r as f64 / b.sampling_rate_hz).to_string());
            row.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| DataError::io(&path, e))?;
        manifest
            .write_record([
                name,
                b.timestamp.to_string(),
                b.sampling_rate_hz.to_string(),
                b.label.map(|l| l.as_str().to_string()).unwrap_or_default(),
            ])
            .map_err(|e| csv_err(&manifest_path, e))?;
    }
    manifest.flush().map_err(|e| DataError::io(&manifest_path, e))?;
    Ok(manifest_path)
}
