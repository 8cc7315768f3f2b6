//! Vibration data: batches, datasets, ingestion, preprocessing, windowing,
//! chronological splits and a synthetic generator.

mod csvio;
mod ims;
mod preprocess;
mod split;
mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;

pub use csvio::{load_csv_dataset, write_csv_dataset};
pub use ims::{
    expected_ims_files, load_ims_batch, load_ims_channel, load_ims_channels, parse_ims_timestamp,
    IMS_BATCH_LEN, IMS_SAMPLING_RATE_HZ,
};
pub use preprocess::{
    downsample, make_windows, standardize, window_count, DownsampleMethod, Standardizer,
};
pub use split::{chronological_split, Split, SplitSpec};
pub use synth::{synth_generate, tail_anomaly_indices, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Self::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }

    pub fn parse(s: &str) -> Option<Option<Label>> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" => Some(None),
            "normal" | "0" => Some(Some(Label::Normal)),
            "anomalous" | "anomaly" | "1" => Some(Some(Label::Anomalous)),
            _ => None,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One timestamped measurement burst, `samples` is `[n_samples, n_features]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VibrationBatch {
    pub timestamp: f64,
    pub samples: Tensor<f32>,
    pub sampling_rate_hz: f64,
    pub label: Option<Label>,
}

impl VibrationBatch {
    pub fn new(
        timestamp: f64,
        samples: Tensor<f32>,
        sampling_rate_hz: f64,
        label: Option<Label>,
    ) -> Result<Self, DataError> {
        if samples.rank() != 2 || samples.shape()[0] == 0 || samples.shape()[1] == 0 {
            return Err(DataError::Invalid(format!(
                "batch samples must be [n >= 1, features >= 1], got {:?}",
                samples.shape()
            )));
        }
        if !samples.is_finite() {
            return Err(DataError::Invalid("batch contains non-finite samples".into()));
        }
        if !(sampling_rate_hz > 0.0) {
            return Err(DataError::Invalid("sampling rate must be positive".into()));
        }
        Ok(Self {
            timestamp,
            samples,
            sampling_rate_hz,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_count(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn is_anomalous(&self) -> bool {
        self.label == Some(Label::Anomalous)
    }

    /// Size of the samples as 4-byte floats.
    pub fn raw_bytes(&self) -> u64 {
        (self.samples.len() * 4) as u64
    }
}

/// Time-ordered batches from one source.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub source_id: String,
    pub feature_count: usize,
    batches: Vec<VibrationBatch>,
}

impl Dataset {
    pub fn new(source_id: impl Into<String>, batches: Vec<VibrationBatch>) -> Result<Self, DataError> {
        let first = batches.first().ok_or(DataError::Empty)?;
        let feature_count = first.feature_count();
        for (i, b) in batches.iter().enumerate() {
            if b.feature_count() != feature_count {
                return Err(DataError::Inconsistent(format!(
                    "batch {i} has {} features, expected {feature_count}",
                    b.feature_count()
                )));
            }
            if i > 0 && b.timestamp <= batches[i - 1].timestamp {
                return Err(DataError::Inconsistent(format!(
                    "batch {i} timestamp {} does not follow {}",
                    b.timestamp,
                    batches[i - 1].timestamp
                )));
            }
        }
        Ok(Self {
            source_id: source_id.into(),
            feature_count,
            batches,
        })
    }

    pub fn batches(&self) -> &[VibrationBatch] {
        &self.batches
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn labels(&self) -> Vec<Option<Label>> {
        self.batches.iter().map(|b| b.label).collect()
    }

    pub fn raw_bytes(&self) -> u64 {
        self.batches.iter().map(VibrationBatch::raw_bytes).sum()
    }

    /// Applies `f` to every batch, keeping order and source.
    pub fn map_batches(
        &self,
        mut f: impl FnMut(&VibrationBatch) -> Result<VibrationBatch, DataError>,
    ) -> Result<Self, DataError> {
        let batches = self.batches.iter().map(&mut f).collect::<Result<Vec<_>, _>>()?;
        Dataset::new(self.source_id.clone(), batches)
    }
}

/// Fixed-length slice of a batch, `values` is `[window_size, n_features]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub values: Tensor<f32>,
    pub batch_index: usize,
    pub offset: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(ts: f64, features: usize) -> VibrationBatch {
        VibrationBatch::new(ts, Tensor::zeros(&[4, features]), 100.0, None).unwrap()
    }

    #[test]
    fn dataset_requires_increasing_timestamps() {
        assert!(Dataset::new("a", vec![batch(1.0, 1), batch(2.0, 1)]).is_ok());
        assert!(matches!(
            Dataset::new("a", vec![batch(2.0, 1), batch(2.0, 1)]),
            Err(DataError::Inconsistent(_))
        ));
    }

    #[test]
    fn dataset_requires_uniform_features() {
        assert!(matches!(
            Dataset::new("a", vec![batch(1.0, 3), batch(2.0, 1)]),
            Err(DataError::Inconsistent(_))
        ));
        assert!(matches!(Dataset::new("a", vec![]), Err(DataError::Empty)));
    }

    #[test]
    fn batch_rejects_non_finite() {
        let t = Tensor::new(vec![2, 1], vec![1.0, f32::NAN]).unwrap();
        assert!(VibrationBatch::new(0.0, t, 10.0, None).is_err());
    }

    #[test]
    fn label_parsing() {
        assert_eq!(Label::parse(""), Some(None));
        assert_eq!(Label::parse("Anomalous"), Some(Some(Label::Anomalous)));
        assert_eq!(Label::parse("x"), None);
    }
}
