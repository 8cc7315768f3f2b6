//! Anomaly threshold from the spread of reference reconstruction errors.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::signal::Label;

/// Below this standard deviation the reference errors are treated as constant.
const SIGMA_FLOOR: f64 = 1e-12;
/// Margin above the mean used when the spread is degenerate.
const DEGENERATE_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `δ·σ`, without a mean term.
    SigmaOnly,
    /// `mean + δ·σ`.
    #[default]
    MeanPlusSigma,
}

impl ThresholdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::SigmaOnly => "sigma_only",
            ThresholdMode::MeanPlusSigma => "mean_plus_sigma",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub reference_res: Vec<f64>,
    pub delta: f64,
    pub mode: ThresholdMode,
    pub threshold: f64,
}

/// Per-batch outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub batch_index: usize,
    pub score: f64,
    pub threshold: f64,
    pub label: Label,
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn threshold_value(reference_res: &[f64], delta: f64, mode: ThresholdMode) -> f64 {
    let (mean, sigma) = mean_and_sample_std(reference_res);
    let t = match mode {
        ThresholdMode::SigmaOnly => delta * sigma,
        ThresholdMode::MeanPlusSigma => mean + delta * sigma,
    };
    if sigma < SIGMA_FLOOR {
        t.max(mean + DEGENERATE_MARGIN)
    } else {
        t
    }
}

pub fn calibrate_threshold(
    reference_res: &[f64],
    delta: f64,
    mode: ThresholdMode,
) -> Result<ThresholdModel, ModelError> {
    if reference_res.len() < 2 {
        return Err(ModelError::Invalid(format!(
            "threshold calibration needs at least 2 reference errors, got {}",
            reference_res.len()
        )));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(ModelError::Config(format!("sensitivity {delta} must be finite and >= 0")));
    }
    if let Some(bad) = reference_res.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(ModelError::Invalid(format!("reference error {bad} is not a finite non-negative value")));
    }
    Ok(ThresholdModel {
        reference_res: reference_res.to_vec(),
        delta,
        mode,
        threshold: threshold_value(reference_res, delta, mode),
    })
}

/// `score <= threshold` is normal.
pub fn classify(score: f64, model: &ThresholdModel) -> Label {
    if score <= model.threshold {
        Label::Normal
    } else {
        Label::Anomalous
    }
}

impl ThresholdModel {
    pub fn mean(&self) -> f64 {
        mean_and_sample_std(&self.reference_res).0
    }

    pub fn sigma(&self) -> f64 {
        mean_and_sample_std(&self.reference_res).1
    }

    /// Threshold re-derived from the stored reference errors.
    pub fn recompute(&self) -> f64 {
        threshold_value(&self.reference_res, self.delta, self.mode)
    }

    pub fn verdict(&self, batch_index: usize, score: f64) -> AnomalyVerdict {
        AnomalyVerdict {
            batch_index,
            score,
            threshold: self.threshold,
            label: classify(score, self),
        }
    }
}
