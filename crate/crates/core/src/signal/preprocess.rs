use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, VibrationBatch, Window};
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleMethod {
    /// Mean of each group of `factor` samples.
    #[default]
    Mean,
    /// Keep the first sample of each group.
    Decimate,
}

/// Reduces the sampling rate by an integer factor. Trailing samples that do
/// not fill a whole group are dropped.
pub fn downsample(
    batch: &VibrationBatch,
    factor: usize,
    method: DownsampleMethod,
) -> Result<VibrationBatch, DataError> {
    if factor < 1 {
        return Err(DataError::Invalid("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(batch.clone());
    }
    let n = batch.len();
    let features = batch.feature_count();
    let groups = n / factor;
    if groups == 0 {
        return Err(DataError::Invalid(format!(
            "batch of {n} samples is shorter than downsample factor {factor}"
        )));
    }
    let src = batch.samples.data();
    let mut out = Vec::with_capacity(groups * features);
    for g in 0..groups {
        let start = g * factor;
        for f in 0..features {
            let v = match method {
                DownsampleMethod::Mean => {
                    let sum: f64 = (start..start + factor)
                        .map(|r| src[r * features + f] as f64)
                        .sum();
                    (sum / factor as f64) as f32
                }
                DownsampleMethod::Decimate => src[start * features + f],
            };
            out.push(v);
        }
    }
    VibrationBatch::new(
        batch.timestamp,
        Tensor::new(vec![groups, features], out).expect("groups*features values"),
        batch.sampling_rate_hz / factor as f64,
        batch.label,
    )
}

pub fn window_count(batch_len: usize, window_size: usize) -> usize {
    if window_size == 0 {
        0
    } else {
        batch_len / window_size
    }
}

/// Non-overlapping consecutive windows; a trailing remainder shorter than
/// `window_size` is dropped.
pub fn make_windows(
    batch: &VibrationBatch,
    batch_index: usize,
    window_size: usize,
) -> Result<Vec<Window>, DataError> {
    if window_size < 1 {
        return Err(DataError::Invalid("window size must be >= 1".into()));
    }
    let features = batch.feature_count();
    let data = batch.samples.data();
    let stride = window_size * features;
    Ok((0..window_count(batch.len(), window_size))
        .map(|w| Window {
            values: Tensor::new(
                vec![window_size, features],
                data[w * stride..(w + 1) * stride].to_vec(),
            )
            .expect("window slice"),
            batch_index,
            offset: w * window_size,
        })
        .collect())
}

/// Per-feature affine standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and standard deviation per feature over the given batches.
    pub fn fit<'a>(batches: impl IntoIterator<Item = &'a VibrationBatch>) -> Result<Self, DataError> {
        let mut sum = Vec::new();
        let mut sq = Vec::new();
        let mut count = 0usize;
        for b in batches {
            let f = b.feature_count();
            if sum.is_empty() {
                sum = vec![0.0f64; f];
                sq = vec![0.0f64; f];
            } else if sum.len() != f {
                return Err(DataError::Inconsistent("feature count differs".into()));
            }
            for row in b.samples.data().chunks(f) {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += v as f64;
                    sq[k] += (v as f64) * (v as f64);
                }
            }
            count += b.len();
        }
        if count == 0 {
            return Err(DataError::Empty);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, batch: &VibrationBatch) -> Result<VibrationBatch, DataError> {
        let f = batch.feature_count();
        if f != self.mean.len() {
            return Err(DataError::Inconsistent("feature count differs".into()));
        }
        let data = batch
            .samples
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| ((v as f64 - self.mean[i % f]) / self.std[i % f]) as f32)
            .collect();
        VibrationBatch::new(
            batch.timestamp,
            Tensor::new(batch.samples.shape().to_vec(), data).expect("same shape"),
            batch.sampling_rate_hz,
            batch.label,
        )
    }
}

/// Standardizes every batch with statistics fitted on `fit_range` batches.
pub fn standardize(
    dataset: &Dataset,
    fit_range: std::ops::Range<usize>,
) -> Result<(Dataset, Standardizer), DataError> {
    let s = Standardizer::fit(&dataset.batches()[fit_range])?;
    let out = dataset.map_batches(|b| s.apply(b))?;
    Ok((out, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch_of(values: Vec<f32>, features: usize, rate: f64) -> VibrationBatch {
        let n = values.len() / features;
        VibrationBatch::new(0.0, Tensor::new(vec![n, features], values).unwrap(), rate, None)
            .unwrap()
    }

    #[test]
    fn ims_rate_reduction() {
        let b = batch_of(vec![0.5; 20_480], 1, 20_480.0);
        let d = downsample(&b, 5, DownsampleMethod::Mean).unwrap();
        assert_eq!(d.len(), 4096);
        assert_eq!(d.sampling_rate_hz, 4096.0);
    }

    #[test]
    fn factor_one_is_identity() {
        let b = batch_of(vec![1.0, 2.0, 3.0], 1, 10.0);
        assert_eq!(downsample(&b, 1, DownsampleMethod::Mean).unwrap(), b);
    }

    #[test]
    fn group_means() {
        let b = batch_of((1..=10).map(|v| v as f32).collect(), 1, 10.0);
        let d = downsample(&b, 5, DownsampleMethod::Mean).unwrap();
        assert_eq!(d.samples.data(), &[3.0, 8.0]);
        let d = downsample(&b, 5, DownsampleMethod::Decimate).unwrap();
        assert_eq!(d.samples.data(), &[1.0, 6.0]);
    }

    #[test]
    fn zero_factor_rejected() {
        let b = batch_of(vec![1.0, 2.0], 1, 10.0);
        assert!(downsample(&b, 0, DownsampleMethod::Mean).is_err());
    }

    #[test]
    fn window_counts() {
        let b = batch_of(vec![0.0; 800], 1, 4000.0);
        assert_eq!(make_windows(&b, 0, 100).unwrap().len(), 8);
        assert_eq!(make_windows(&b, 0, 800).unwrap().len(), 1);
        assert_eq!(make_windows(&b, 0, 801).unwrap().len(), 0);
        let b = batch_of(vec![0.0; 1050], 1, 4000.0);
        let w = make_windows(&b, 3, 100).unwrap();
        assert_eq!(w.len(), 10);
        assert_eq!(w[9].offset, 900);
        assert_eq!(w[9].batch_index, 3);
    }

    proptest! {
        #[test]
        fn windows_partition_prefix(
            values in proptest::collection::vec(-5.0f32..5.0, 1..400),
            window in 1usize..50,
            features in 1usize..4,
        ) {
            let n = values.len() / features;
            prop_assume!(n >= 1);
            let values = values[..n * features].to_vec();
            let b = batch_of(values.clone(), features, 100.0);
            let ws = make_windows(&b, 0, window).unwrap();
            let joined: Vec<f32> = ws.iter().flat_map(|w| w.values.data().to_vec()).collect();
            prop_assert_eq!(&joined[..], &values[..ws.len() * window * features]);
        }

        #[test]
        fn mean_pooling_preserves_mean(
            values in proptest::collection::vec(-5.0f32..5.0, 2..600),
            factor in 1usize..10,
        ) {
            prop_assume!(values.len() >= factor);
            let b = batch_of(values.clone(), 1, 100.0);
            let d = downsample(&b, factor, DownsampleMethod::Mean).unwrap();
            let kept = d.len() * factor;
            let m0: f64 = values[..kept].iter().map(|&v| v as f64).sum::<f64>() / kept as f64;
            let m1: f64 = d.samples.data().iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
            prop_assert!((m0 - m1).abs() < 1e-6);
        }
    }
}
