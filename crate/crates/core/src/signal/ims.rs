//! NASA IMS bearing run-to-failure files.
//!
//! Each file is one measurement: whitespace-separated ASCII, one row per
//! sample and one column per channel, named after its recording time
//! (`YYYY.MM.DD.HH.MM.SS`).

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;

use super::{DataError, Dataset, VibrationBatch};
use crate::nn::Tensor;

pub const IMS_SAMPLING_RATE_HZ: f64 = 20_480.0;
pub const IMS_BATCH_LEN: usize = 20_480;

/// Number of measurement files in each IMS test set.
pub fn expected_ims_files(set: u8) -> Option<usize> {
    match set {
        1 => Some(2156),
        2 => Some(984),
        3 => Some(4448),
        _ => None,
    }
}

/// Seconds since the Unix epoch encoded in an IMS file name.
pub fn parse_ims_timestamp(path: &Path) -> Result<f64, DataError> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| DataError::parse(path, 0, "file name is not valid UTF-8"))?;
    NaiveDateTime::parse_from_str(name, "%Y.%m.%d.%H.%M.%S")
        .map(|t| t.and_utc().timestamp() as f64)
        .map_err(|e| DataError::parse(path, 0, format!("file name is not a timestamp: {e}")))
}

/// Reads one IMS file and returns a single-channel batch per column.
pub fn load_ims_batch(path: &Path) -> Result<Vec<VibrationBatch>, DataError> {
    let timestamp = parse_ims_timestamp(path)?;
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut columns: Vec<Vec<f32>> = Vec::new();
    let mut row = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        row.clear();
        for tok in line.split_whitespace() {
            let v: f32 = tok.parse().map_err(|_| {
                DataError::parse(path, line_no, format!("non-numeric token {tok:?}"))
            })?;
            if !v.is_finite() {
                return Err(DataError::parse(path, line_no, "non-finite value"));
            }
            row.push(v);
        }
        if columns.is_empty() {
            columns = vec![Vec::with_capacity(IMS_BATCH_LEN); row.len()];
        } else if row.len() != columns.len() {
            return Err(DataError::parse(
                path,
                line_no,
                format!("expected {} columns, found {}", columns.len(), row.len()),
            ));
        }
        for (col, &v) in columns.iter_mut().zip(&row) {
            col.push(v);
        }
    }
    if columns.is_empty() {
        return Err(DataError::parse(path, 0, "file contains no samples"));
    }
    columns
        .into_iter()
        .map(|col| {
            let n = col.len();
            VibrationBatch::new(
                timestamp,
                Tensor::new(vec![n, 1], col).expect("column"),
                IMS_SAMPLING_RATE_HZ,
                None,
            )
        })
        .collect()
}

fn ims_files(dir: &Path) -> Result<Vec<(f64, PathBuf)>, DataError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let entry = entry.map_err(|e| DataError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            if let Ok(ts) = parse_ims_timestamp(&path) {
                files.push((ts, path));
            }
        }
    }
    files.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(files)
}

/// Loads one channel of every IMS file in `dir` as a time-ordered dataset.
pub fn load_ims_channel(dir: &Path, channel: usize) -> Result<Dataset, DataError> {
    Ok(load_ims_channels(dir, &[channel], |b| Ok(b))?.remove(0))
}

/// Loads several channels in one pass over the files, applying `transform`
/// (typically downsampling) to each batch as it is read.
pub fn load_ims_channels(
    dir: &Path,
    channels: &[usize],
    transform: impl Fn(VibrationBatch) -> Result<VibrationBatch, DataError>,
) -> Result<Vec<Dataset>, DataError> {
    let files = ims_files(dir)?;
    if files.is_empty() || channels.is_empty() {
        return Err(DataError::Empty);
    }
    let mut per_channel: Vec<Vec<VibrationBatch>> = vec![Vec::with_capacity(files.len()); channels.len()];
    for (_, path) in &files {
        let mut columns: Vec<Option<VibrationBatch>> = load_ims_batch(path)?.into_iter().map(Some).collect();
        for (k, &c) in channels.iter().enumerate() {
            let batch = columns.get_mut(c).and_then(Option::take).ok_or_else(|| {
                DataError::Inconsistent(format!(
                    "{}: channel {c} requested but file has {} columns",
                    path.display(),
                    columns.len()
                ))
            })?;
            per_channel[k].push(transform(batch)?);
        }
    }
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("ims")
        .to_string();
    channels
        .iter()
        .zip(per_channel)
        .map(|(c, batches)| Dataset::new(format!("{name}/ch{c}"), batches))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn four_channel_file() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = (0..IMS_BATCH_LEN)
            .map(|i| format!("{:.3}\t-0.1\t0.05\t{}\n", i as f32 * 1e-3, i % 3))
            .collect();
        let p = write(dir.path(), "2004.02.12.10.32.39", &body);
        let batches = load_ims_batch(&p).unwrap();
        assert_eq!(batches.len(), 4);
        for b in &batches {
            assert_eq!(b.len(), IMS_BATCH_LEN);
            assert_eq!(b.sampling_rate_hz, IMS_SAMPLING_RATE_HZ);
        }
        assert_eq!(batches[0].timestamp, 1_076_581_959.0);
        assert_eq!(batches[3].samples.data()[4], 1.0);
    }

    #[test]
    fn bad_token_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "2004.02.12.10.32.39", "0.1 0.2\n0.3 abc\n");
        let err = load_ims_batch(&p).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("2004.02.12.10.32.39:2"));
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "2004.02.12.10.32.39", "0.1 0.2\n0.3\n");
        assert!(matches!(load_ims_batch(&p), Err(DataError::Parse { line: 2, .. })));
    }

    #[test]
    fn bad_file_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "measurement.txt", "0.1\n");
        assert!(matches!(load_ims_batch(&p), Err(DataError::Parse { .. })));
    }

    #[test]
    fn directory_sorted_by_time() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "2004.02.12.10.42.39", "2 20\n2 20\n");
        write(dir.path(), "2004.02.12.10.32.39", "1 10\n1 10\n");
        write(dir.path(), "README", "ignored");
        let ds = load_ims_channel(dir.path(), 1).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.batches()[0].samples.data(), &[10.0, 10.0]);
        assert!(load_ims_channel(dir.path(), 2).is_err());
    }
}
