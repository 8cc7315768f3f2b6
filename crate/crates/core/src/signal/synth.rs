//! Synthetic rotating-machine vibration.
//!
//! Normal batches are a fixed-frequency sinusoid mixture per axis with a
//! random phase per batch plus Gaussian noise. Anomalous batches are the same
//! signal scaled by `anomaly_amplitude_factor`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Label, VibrationBatch};
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_batches: usize,
    pub batch_len: usize,
    pub n_features: usize,
    pub sampling_rate_hz: f64,
    pub anomaly_indices: Vec<usize>,
    pub anomaly_amplitude_factor: f64,
    /// `(frequency_hz, amplitude)` components shared by every axis.
    pub components: Vec<(f64, f64)>,
    pub noise_std: f64,
    pub start_timestamp: f64,
    pub interval_s: f64,
    pub seed: u64,
    pub source_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_batches: 200,
            batch_len: 800,
            n_features: 3,
            sampling_rate_hz: 4000.0,
            anomaly_indices: tail_anomaly_indices(200, 4),
            anomaly_amplitude_factor: 2.0,
            components: vec![(50.0, 1.0), (120.0, 0.5), (310.0, 0.25)],
            noise_std: 0.05,
            start_timestamp: 1_600_000_000.0,
            interval_s: 3600.0,
            seed: 0,
            source_id: "synth".into(),
        }
    }
}

/// `count` indices spread evenly over the final fifth of `n_batches`.
pub fn tail_anomaly_indices(n_batches: usize, count: usize) -> Vec<usize> {
    if count == 0 || n_batches == 0 {
        return Vec::new();
    }
    let start = n_batches - n_batches / 5;
    let span = n_batches - start;
    (0..count)
        .map(|k| start + (k * span + span / 2) / count)
        .filter(|&i| i < n_batches)
        .collect()
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    if cfg.n_batches == 0 || cfg.batch_len == 0 || cfg.n_features == 0 {
        return Err(DataError::Invalid("synthetic dataset dimensions must be positive".into()));
    }
    if let Some(&bad) = cfg.anomaly_indices.iter().find(|&&i| i >= cfg.n_batches) {
        return Err(DataError::Invalid(format!(
            "anomaly index {bad} outside 0..{}",
            cfg.n_batches
        )));
    }
    if !(cfg.sampling_rate_hz > 0.0) || !(cfg.interval_s > 0.0) || !(cfg.noise_std >= 0.0) {
        return Err(DataError::Invalid("invalid synthetic rates or noise".into()));
    }
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // per-axis gain keeps the axes distinguishable
    let gains: Vec<f64> = (0..cfg.n_features).map(|f| 1.0 / (1.0 + 0.25 * f as f64)).collect();

    let mut batches = Vec::with_capacity(cfg.n_batches);
    for b in 0..cfg.n_batches {
        let anomalous = cfg.anomaly_indices.contains(&b);
        let scale = if anomalous {
            cfg.anomaly_amplitude_factor
        } else {
            1.0
        };
        let phases: Vec<f64> = (0..cfg.n_features * cfg.components.len())
            .map(|_| rng.random_range(0.0..TAU))
            .collect();
        let mut data = Vec::with_capacity(cfg.batch_len * cfg.n_features);
        for s in 0..cfg.batch_len {
            let t = s as f64 / cfg.sampling_rate_hz;
            for (f, gain) in gains.iter().enumerate() {
                let clean: f64 = cfg
                    .components
                    .iter()
                    .enumerate()
                    .map(|(k, &(freq, amp))| {
                        amp * (TAU * freq * t + phases[f * cfg.components.len() + k]).sin()
                    })
                    .sum();
                let v = scale * (gain * clean + noise.sample(&mut rng));
                data.push(v as f32);
            }
        }
        batches.push(VibrationBatch::new(
            cfg.start_timestamp + b as f64 * cfg.interval_s,
            Tensor::new(vec![cfg.batch_len, cfg.n_features], data).expect("len*features"),
            cfg.sampling_rate_hz,
            Some(if anomalous {
                Label::Anomalous
            } else {
                Label::Normal
            }),
        )?);
    }
    Dataset::new(cfg.source_id.clone(), batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(b: &VibrationBatch) -> f64 {
        let d = b.samples.data();
        (d.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
    }

    #[test]
    fn anomalies_have_double_rms() {
        let ds = synth_generate(&SynthConfig::default()).unwrap();
        let (mut normal, mut anomalous) = (Vec::new(), Vec::new());
        for b in ds.batches() {
            if b.is_anomalous() {
                anomalous.push(rms(b));
            } else {
                normal.push(rms(b));
            }
        }
        assert_eq!(anomalous.len(), 4);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ratio = mean(&anomalous) / mean(&normal);
        assert!((ratio - 2.0).abs() <= 0.2, "ratio {ratio}");
    }

    #[test]
    fn unit_factor_keeps_labels() {
        let cfg = SynthConfig {
            anomaly_amplitude_factor: 1.0,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        let labelled = ds.batches().iter().filter(|b| b.is_anomalous()).count();
        assert_eq!(labelled, 4);
        let r: Vec<f64> = ds.batches().iter().map(rms).collect();
        let lo = r.iter().cloned().fold(f64::MAX, f64::min);
        let hi = r.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo < 1.2);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            n_batches: 10,
            anomaly_indices: vec![7],
            ..SynthConfig::default()
        };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(synth_generate(&cfg).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn anomaly_index_out_of_range() {
        let cfg = SynthConfig {
            n_batches: 10,
            anomaly_indices: vec![10],
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg).is_err());
    }

    #[test]
    fn default_anomalies_in_test_segment() {
        let idx = tail_anomaly_indices(200, 4);
        assert_eq!(idx.len(), 4);
        assert!(idx.iter().all(|&i| (160..200).contains(&i)));
    }
}
