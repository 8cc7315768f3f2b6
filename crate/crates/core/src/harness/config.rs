//! Experiment configuration, read from TOML.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::model::{AutoencoderConfig, ReferenceUnit, ScoreAggregation, ThresholdMode};
use crate::nn::TrainConfig;
use crate::signal::{tail_anomaly_indices, DownsampleMethod, SplitSpec, SynthConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Historical,
    ColdStart,
    KnowledgeTransfer,
    Centralized,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Historical => "historical",
            Scenario::ColdStart => "cold_start",
            Scenario::KnowledgeTransfer => "knowledge_transfer",
            Scenario::Centralized => "centralized",
        }
    }
}

/// Where a node's batches come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthConfig),
    Csv { manifest: PathBuf },
    /// One channel of an IMS test-set directory.
    Ims { dir: PathBuf, channel: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub source: DataSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    pub target: NodeSpec,
    /// Leading share of the target's batches used to recalibrate the threshold.
    #[serde(default = "default_calibration_fraction")]
    pub calibration_fraction: f64,
}

fn default_calibration_fraction() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub rounds: u64,
    pub epochs_per_round: usize,
    /// Threshold sensitivity δ.
    pub delta: f64,
    pub threshold_mode: ThresholdMode,
    pub score_aggregation: ScoreAggregation,
    /// Whether validation window errors or batch scores set the threshold.
    pub reference_unit: ReferenceUnit,
    pub persist_optimizer: bool,
    pub centralized_epochs: usize,
    pub cold_start_step: usize,
    pub downsample_factor: usize,
    pub downsample_method: DownsampleMethod,
    pub standardize: bool,
    pub split: SplitSpec,
    pub model: AutoencoderConfig,
    pub train: TrainConfig,
    pub nodes: Vec<NodeSpec>,
    pub transfer: Option<TransferSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Historical,
            seed: 0,
            rounds: 25,
            epochs_per_round: 1,
            delta: 3.0,
            threshold_mode: ThresholdMode::MeanPlusSigma,
            score_aggregation: ScoreAggregation::Mean,
            reference_unit: ReferenceUnit::Window,
            persist_optimizer: false,
            centralized_epochs: 100,
            cold_start_step: 64,
            downsample_factor: 1,
            downsample_method: DownsampleMethod::Mean,
            standardize: false,
            split: SplitSpec::default(),
            model: AutoencoderConfig::default(),
            train: TrainConfig::default(),
            nodes: Vec::new(),
            transfer: None,
        }
    }
}

/// Compact autoencoder used for the synthetic multi-node runs.
pub fn synthetic_model(feature_count: usize) -> AutoencoderConfig {
    AutoencoderConfig {
        window_size: 100,
        feature_count,
        outer_layer_sizes: vec![3],
        encoding_size: 2,
    }
}

impl ExperimentConfig {
    /// `n_nodes` synthetic machines shaped like the industrial data: 200
    /// batches of 800 three-axis samples each, four amplitude-doubled
    /// batches near the end.
    pub fn synthetic(n_nodes: usize, seed: u64) -> Self {
        let nodes = (0..n_nodes)
            .map(|i| {
                let id = format!("node{i}");
                NodeSpec {
                    id: id.clone(),
                    source: DataSource::Synth(SynthConfig {
                        n_batches: 200,
                        batch_len: 800,
                        n_features: 3,
                        anomaly_indices: tail_anomaly_indices(200, 4),
                        anomaly_amplitude_factor: 2.0,
                        seed: seed.wrapping_add(1 + i as u64),
                        source_id: id,
                        ..SynthConfig::default()
                    }),
                }
            })
            .collect();
        Self {
            seed,
            model: synthetic_model(3),
            train: TrainConfig {
                learning_rate: 1e-2,
                ..TrainConfig::default()
            },
            nodes,
            ..Self::default()
        }
    }

    /// Four bearings of IMS test set 2, downsampled to 4096 Hz, with the
    /// default single-channel architecture.
    pub fn ims_set2(dir: &Path) -> Self {
        let nodes = (0..4)
            .map(|c| NodeSpec {
                id: format!("B{}", c + 1),
                source: DataSource::Ims {
                    dir: dir.to_path_buf(),
                    channel: c,
                },
            })
            .collect();
        Self {
            downsample_factor: 5,
            model: AutoencoderConfig::default(),
            nodes,
            ..Self::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file; relative data paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let s = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&s)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    /// Prefixes every relative dataset path with `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let sources = self
            .nodes
            .iter_mut()
            .chain(self.transfer.as_mut().map(|t| &mut t.target))
            .map(|n| &mut n.source);
        for source in sources {
            let path = match source {
                DataSource::Csv { manifest } => manifest,
                DataSource::Ims { dir, .. } => dir,
                DataSource::Synth(_) => continue,
            };
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.nodes.is_empty() {
            return err("at least one node is required".into());
        }
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if n.id.is_empty() || n.id.len() > u16::MAX as usize {
                return err(format!("invalid node id {:?}", n.id));
            }
            if !ids.insert(n.id.as_str()) {
                return err(format!("duplicate node id {:?}", n.id));
            }
        }
        if self.epochs_per_round == 0 {
            return err("epochs_per_round must be >= 1".into());
        }
        if self.cold_start_step == 0 {
            return err("cold_start_step must be >= 1".into());
        }
        if self.downsample_factor == 0 {
            return err("downsample_factor must be >= 1".into());
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return err(format!("delta {} must be finite and >= 0", self.delta));
        }
        if self.scenario == Scenario::Centralized && self.centralized_epochs == 0 {
            return err("centralized_epochs must be >= 1".into());
        }
        match (&self.transfer, self.scenario) {
            (None, Scenario::KnowledgeTransfer) => {
                return err("knowledge_transfer needs a [transfer] section".into())
            }
            (Some(t), _) if !(t.calibration_fraction > 0.0 && t.calibration_fraction < 1.0) => {
                return err("transfer.calibration_fraction must lie in (0, 1)".into())
            }
            _ => {}
        }
        self.model
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}
