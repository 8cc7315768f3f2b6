//! Reconstruction errors and per-batch anomaly scores.

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{windows_to_batch, AutoencoderModel, ModelError};
use crate::nn::{NnError, Scalar, Tensor};
use crate::signal::{make_windows, VibrationBatch, Window};

/// Windows scored per forward pass.
const SCORE_CHUNK: usize = 256;

/// How per-window errors combine into a batch score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAggregation {
    #[default]
    Mean,
    Max,
}

/// Which errors form a threshold's reference set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceUnit {
    /// Every window error of the calibration batches.
    #[default]
    Window,
    /// One aggregated score per calibration batch.
    Batch,
}

/// Reference errors from the window errors of each calibration batch.
pub fn reference_errors(
    batch_errors: &[Vec<f64>],
    unit: ReferenceUnit,
    aggregation: ScoreAggregation,
) -> Result<Vec<f64>, ModelError> {
    match unit {
        ReferenceUnit::Window => Ok(batch_errors.iter().flatten().copied().collect()),
        ReferenceUnit::Batch => batch_errors
            .iter()
            .map(|e| score_windows(e, aggregation))
            .collect(),
    }
}

/// Mean squared difference over every element.
pub fn reconstruction_error<F: Scalar>(input: &Tensor<F>, prediction: &Tensor<F>) -> Result<f64, ModelError> {
    if input.shape() != prediction.shape() {
        return Err(ModelError::Nn(NnError::Shape(format!(
            "window {:?} and reconstruction {:?} differ",
            input.shape(),
            prediction.shape()
        ))));
    }
    if input.is_empty() {
        return Err(ModelError::UndefinedScore("empty window".into()));
    }
    let sum: f64 = input
        .data()
        .iter()
        .zip(prediction.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(sum / input.len() as f64)
}

/// Reconstruction error of every window, in input order.
pub fn window_errors<F: Scalar>(model: &AutoencoderModel<F>, windows: &[Window]) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(SCORE_CHUNK) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let x = windows_to_batch::<F>(&refs)?;
        let (y, _) = model.forward_batch(x.view())?;
        let d = (x.shape()[0] * x.shape()[2]) as f64;
        for b in 0..chunk.len() {
            let xi = x.index_axis(Axis(1), b);
            let yi = y.index_axis(Axis(1), b);
            let sum: f64 = xi
                .iter()
                .zip(yi.iter())
                .map(|(&a, &p)| (a.as_f64() - p.as_f64()).powi(2))
                .sum();
            out.push(sum / d);
        }
    }
    Ok(out)
}

/// Combines per-window errors into one score.
pub fn score_windows(errors: &[f64], aggregation: ScoreAggregation) -> Result<f64, ModelError> {
    if errors.is_empty() {
        return Err(ModelError::UndefinedScore("batch yields no windows".into()));
    }
    Ok(match aggregation {
        ScoreAggregation::Mean => errors.iter().sum::<f64>() / errors.len() as f64,
        ScoreAggregation::Max => errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Anomaly score of one batch cut into the model's window size.
pub fn batch_anomaly_score<F: Scalar>(
    model: &AutoencoderModel<F>,
    batch: &VibrationBatch,
    aggregation: ScoreAggregation,
) -> Result<f64, ModelError> {
    let windows = make_windows(batch, 0, model.config().window_size)?;
    if windows.is_empty() {
        return Err(ModelError::UndefinedScore(format!(
            "batch of {} samples is shorter than one window of {}",
            batch.len(),
            model.config().window_size
        )));
    }
    score_windows(&window_errors(model, &windows)?, aggregation)
}
