//! Experiment runner: scenario drivers, detection and traffic reports,
//! hyperparameter sweeps and CSV export.

mod config;
mod data;
mod export;
mod run;
mod sweep;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use config::{synthetic_model, DataSource, ExperimentConfig, NodeSpec, Scenario, TransferSpec};
pub use data::{load_source, prepare_node, prepare_nodes, verify_ims_dir, LoadedSource, PreparedNode};
pub use export::{export_results, read_scores, ScoreRow};
pub use run::{
    cold_start_windows, evaluate_nodes, evaluate_transfer, federate, network_reduction, node_config, run_centralized,
    run_cold_start, run_experiment, run_historical, run_knowledge_transfer, COLD_START_STEP,
};
pub use sweep::{sweep_hyperparameters, SearchSpace, SweepPoint, SweepResult, SweepScale};

use crate::fed::FedError;
use crate::model::{DetectionMetrics, ModelError};
use crate::signal::{DataError, Label};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset not found at {path}: {hint}")]
    DatasetMissing { path: PathBuf, hint: String },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Per-node figures for one federated round.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeRoundStat {
    pub node: String,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub windows_trained: usize,
    /// Threshold calibrated on the model distributed after this round.
    pub threshold: Option<f64>,
    pub train_duration: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub nodes: Vec<NodeRoundStat>,
    /// Aggregator-side frame bytes attributed to this round.
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub duration: Duration,
    pub aborted: bool,
}

impl RoundReport {
    pub fn windows_trained(&self) -> usize {
        self.nodes.iter().map(|n| n.windows_trained).sum()
    }

    pub fn bytes(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }
}

/// Which part of the chronological split a batch belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Fit,
    Validation,
    Test,
    /// Leading target batches used to recalibrate after a transfer.
    Calibration,
}

impl Segment {
    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Fit => "fit",
            Segment::Validation => "validation",
            Segment::Test => "test",
            Segment::Calibration => "calibration",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchScore {
    pub batch_index: usize,
    pub timestamp: f64,
    pub segment: Segment,
    pub score: f64,
    pub truth: Option<Label>,
    pub verdict: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeDetection {
    pub node: String,
    pub threshold: f64,
    /// Threshold after every round, as calibrated by the node.
    pub threshold_trace: Vec<f64>,
    pub scores: Vec<BatchScore>,
    /// Metrics over labeled test batches; `None` without labels.
    pub metrics: Option<DetectionMetrics>,
}

impl NodeDetection {
    pub fn above_threshold(&self) -> impl Iterator<Item = &BatchScore> {
        self.scores.iter().filter(|s| s.verdict == Label::Anomalous)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSummary {
    /// Every frame exchanged by the federation.
    pub federated_bytes: u64,
    pub setup_bytes: u64,
    pub round_bytes: Vec<u64>,
    /// Pooled sample bytes after preprocessing, 4 bytes per value.
    pub raw_bytes: u64,
    /// Pooled sample bytes as loaded.
    pub raw_original_bytes: u64,
}

impl NetworkSummary {
    pub fn reduction(&self) -> Option<f64> {
        network_reduction(self.federated_bytes, self.raw_bytes).ok()
    }

    pub fn reduction_original(&self) -> Option<f64> {
        network_reduction(self.federated_bytes, self.raw_original_bytes).ok()
    }

    pub fn rounds_constant(&self) -> bool {
        self.round_bytes.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub rounds: Vec<RoundReport>,
    pub detection: Vec<NodeDetection>,
    pub network: NetworkSummary,
    /// Bytes counted on the simulated wire; zero for centralized runs.
    pub wire_bytes: u64,
    /// Set when no training happened (`rounds = 0`).
    pub untrained: bool,
}

impl ExperimentReport {
    pub fn node(&self, id: &str) -> Option<&NodeDetection> {
        self.detection.iter().find(|d| d.node == id)
    }
}
