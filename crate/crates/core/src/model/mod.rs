//! LSTM autoencoder for vibration windows, reconstruction-error scoring,
//! threshold calibration, classification and detection metrics.

mod autoencoder;
mod metrics;
mod score;
mod threshold;
mod train;

pub use autoencoder::{
    build_autoencoder, windows_to_batch, AutoencoderConfig, AutoencoderModel, ForwardCache,
};
pub use metrics::{evaluate_detection, DetectionMetrics};
pub use score::{
    batch_anomaly_score, reconstruction_error, reference_errors, score_windows, window_errors,
    ReferenceUnit, ScoreAggregation,
};
pub use threshold::{calibrate_threshold, classify, AnomalyVerdict, ThresholdMode, ThresholdModel};
pub use train::{shuffle_seed, train_epochs, EpochLosses, TrainHistory, Trainer};

use crate::nn::NnError;
use crate::signal::DataError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("anomaly score undefined: {0}")]
    UndefinedScore(String),
    #[error("training diverged in epoch {epoch} (loss {loss})")]
    Diverged { epoch: u64, loss: f64 },
    #[error("{0}")]
    Invalid(String),
}
