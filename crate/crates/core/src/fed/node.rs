//! Training node: receives the global model, trains locally, submits the
//! weight difference, and recalibrates its anomaly threshold each round.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::codec::{decode_message, encode_message, Message};
use super::transport::Transport;
use super::weights::{compute_delta, ModelWeights};
use super::FedError;
use crate::model::{
    calibrate_threshold, reference_errors, window_errors, AutoencoderConfig, AutoencoderModel,
    ReferenceUnit, ScoreAggregation, ThresholdMode, ThresholdModel, Trainer,
};
use crate::nn::TrainConfig;
use crate::signal::Window;

/// Which prefix of the local training windows a round may use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSchedule {
    #[default]
    All,
    /// The chronologically first `step · r` windows in 1-based round `r`.
    Growing { step: usize },
}

impl WindowSchedule {
    /// Windows available in 1-based round `round` out of `available`.
    pub fn windows_for_round(self, round: u64, available: usize) -> usize {
        match self {
            WindowSchedule::All => available,
            WindowSchedule::Growing { step } => {
                let n = (step as u128).saturating_mul(round as u128);
                n.min(available as u128) as usize
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeConfig {
    pub client_id: String,
    pub model: AutoencoderConfig,
    pub train: TrainConfig,
    pub rounds: u64,
    pub epochs_per_round: usize,
    pub seed: u64,
    /// Keep Adam moments across rounds instead of starting each round fresh.
    pub persist_optimizer: bool,
    pub schedule: WindowSchedule,
    pub delta: f64,
    pub threshold_mode: ThresholdMode,
    pub score_aggregation: ScoreAggregation,
    pub reference_unit: ReferenceUnit,
}

impl NodeConfig {
    pub fn new(client_id: impl Into<String>, model: AutoencoderConfig) -> Self {
        Self {
            client_id: client_id.into(),
            model,
            train: TrainConfig::default(),
            rounds: 25,
            epochs_per_round: 1,
            seed: 0,
            persist_optimizer: false,
            schedule: WindowSchedule::All,
            delta: 3.0,
            threshold_mode: ThresholdMode::default(),
            score_aggregation: ScoreAggregation::default(),
            reference_unit: ReferenceUnit::default(),
        }
    }
}

/// Local data of one node; never leaves the node.
#[derive(Clone, Debug, Default)]
pub struct NodeData {
    /// Training windows in chronological order.
    pub train: Vec<Window>,
    /// Validation windows for the per-epoch validation loss.
    pub val: Vec<Window>,
    /// Windows of each calibration batch, the threshold's reference data.
    pub calibration: Vec<Vec<Window>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRoundLog {
    pub round: u64,
    pub windows_trained: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Threshold calibrated on the aggregated model that ended this round.
    pub threshold: Option<f64>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub train_duration: Duration,
}

/// Frames to transmit after handling an inbound frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeOutput {
    pub send: Vec<Vec<u8>>,
    pub done: bool,
}

#[derive(Debug)]
pub struct TrainingNode {
    config: NodeConfig,
    data: NodeData,
    model: AutoencoderModel<f32>,
    trainer: Trainer<f32>,
    logs: Vec<NodeRoundLog>,
    threshold: Option<ThresholdModel>,
    last_round: Option<u64>,
    pending_received: u64,
    done: bool,
}

impl TrainingNode {
    pub fn new(config: NodeConfig, data: NodeData) -> Result<Self, FedError> {
        if data.train.is_empty() {
            return Err(FedError::Model(crate::model::ModelError::Invalid(format!(
                "node {} has no training windows",
                config.client_id
            ))));
        }
        if config.epochs_per_round == 0 {
            return Err(FedError::State("epochs_per_round must be >= 1".into()));
        }
        let model = AutoencoderModel::build(&config.model, config.seed)?;
        let trainer = Trainer::new(config.train.clone(), config.seed)?;
        Ok(Self {
            config,
            data,
            model,
            trainer,
            logs: Vec::new(),
            threshold: None,
            last_round: None,
            pending_received: 0,
            done: false,
        })
    }

    pub fn client_id(&self) -> &str {
        &self.config.client_id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn model(&self) -> &AutoencoderModel<f32> {
        &self.model
    }

    pub fn logs(&self) -> &[NodeRoundLog] {
        &self.logs
    }

    pub fn threshold(&self) -> Option<&ThresholdModel> {
        self.threshold.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn register_frame(&self) -> Vec<u8> {
        encode_message(&Message::Register {
            client_id: self.config.client_id.clone(),
        })
    }

    /// Consumes one frame from the aggregator.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Result<NodeOutput, FedError> {
        let msg = decode_message(frame)?;
        match msg {
            Message::GlobalModel { round, weights } => {
                self.pending_received += frame.len() as u64;
                self.on_global(round, weights)
            }
            Message::Ack => {
                if let Some(log) = self.logs.last_mut() {
                    log.bytes_received += frame.len() as u64;
                }
                Ok(NodeOutput::default())
            }
            Message::Error { code, text } => Err(FedError::Remote { code, text }),
            other => Err(FedError::State(format!(
                "unexpected message from aggregator: {other:?}"
            ))),
        }
    }

    /// Recalibrates on the current model; `None` with too little reference data.
    fn calibrate(&mut self) -> Result<Option<f64>, FedError> {
        let errors = self
            .data
            .calibration
            .iter()
            .map(|w| window_errors(&self.model, w))
            .collect::<Result<Vec<_>, _>>()?;
        let reference = reference_errors(&errors, self.config.reference_unit, self.config.score_aggregation)?;
        if reference.len() < 2 {
            return Ok(None);
        }
        let t = calibrate_threshold(&reference, self.config.delta, self.config.threshold_mode)?;
        let value = t.threshold;
        self.threshold = Some(t);
        Ok(Some(value))
    }

    fn on_global(&mut self, round: u64, weights: ModelWeights) -> Result<NodeOutput, FedError> {
        if self.done {
            return Err(FedError::State("global model after the final round".into()));
        }
        if let Some(last) = self.last_round {
            if round <= last {
                return Err(FedError::State(format!(
                    "global model for round {round} after round {last}"
                )));
            }
        }
        weights.load_into(&mut self.model)?;
        if round > 0 {
            let threshold = self.calibrate()?;
            if let Some(log) = self.logs.last_mut() {
                log.threshold = threshold;
            }
        }
        if round >= self.config.rounds {
            self.done = true;
            if let Some(log) = self.logs.last_mut() {
                log.bytes_received += std::mem::take(&mut self.pending_received);
            }
            return Ok(NodeOutput {
                send: Vec::new(),
                done: true,
            });
        }

        let start = Instant::now();
        let n = self
            .config
            .schedule
            .windows_for_round(round + 1, self.data.train.len());
        if !self.config.persist_optimizer {
            self.trainer.reset_optimizer();
        }
        self.trainer
            .set_epochs_done(round * self.config.epochs_per_round as u64);
        let history = self.trainer.train(
            &mut self.model,
            &self.data.train[..n],
            &self.data.val,
            self.config.epochs_per_round,
        )?;
        let last = history.last().expect("at least one epoch");
        let local = ModelWeights::from_model(&self.model);
        let delta = compute_delta(&local, &weights, round)?;
        let frame = encode_message(&Message::DeltaSubmission {
            client_id: self.config.client_id.clone(),
            round,
            delta,
            windows_trained: n as u64,
        });
        self.logs.push(NodeRoundLog {
            round,
            windows_trained: n,
            train_loss: last.train_loss,
            val_loss: last.val_loss,
            threshold: None,
            bytes_sent: frame.len() as u64,
            bytes_received: std::mem::take(&mut self.pending_received),
            train_duration: start.elapsed(),
        });
        self.last_round = Some(round);
        Ok(NodeOutput {
            send: vec![frame],
            done: false,
        })
    }
}

/// Drives `node` over `transport` until the final global model arrives.
pub fn training_node_run(
    transport: &mut dyn Transport,
    node: &mut TrainingNode,
    recv_timeout: Duration,
) -> Result<(), FedError> {
    transport.send(&node.register_frame())?;
    while !node.is_done() {
        let frame = transport.recv(Some(recv_timeout))?;
        let out = node.handle_frame(&frame)?;
        for f in &out.send {
            transport.send(f)?;
        }
    }
    Ok(())
}
