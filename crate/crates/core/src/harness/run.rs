//! Scenario drivers.

use super::config::{ExperimentConfig, Scenario};
use super::data::{batch_windows, load_source, prepare_nodes, LoadedSource, PreparedNode};
use super::{
    BatchScore, ExperimentReport, HarnessError, NetworkSummary, NodeDetection, NodeRoundStat,
    RoundReport, Segment,
};
use crate::fed::{simulate_federation, ModelWeights, NodeConfig, SimulationOutcome, TrainingNode, WindowSchedule};
use crate::model::{
    build_autoencoder, calibrate_threshold, evaluate_detection, reference_errors, score_windows,
    train_epochs, window_errors, AutoencoderModel, ThresholdModel,
};
use crate::signal::{standardize, Label};

/// Windows added per round in the cold-start scenario.
pub const COLD_START_STEP: usize = 64;

/// Training windows available in cold-start round `round` (1-based):
/// `64 · round`, capped at `available`.
pub fn cold_start_windows(round: u64, available: usize) -> Result<usize, HarnessError> {
    if round < 1 {
        return Err(HarnessError::Config("cold-start rounds are numbered from 1".into()));
    }
    Ok(WindowSchedule::Growing { step: COLD_START_STEP }.windows_for_round(round, available))
}

/// Percentage of `centralized_bytes` saved by sending `fed_bytes` instead;
/// negative when federation costs more.
pub fn network_reduction(fed_bytes: u64, centralized_bytes: u64) -> Result<f64, HarnessError> {
    if centralized_bytes == 0 {
        return Err(HarnessError::Config("centralized byte count is zero".into()));
    }
    Ok(100.0 * (1.0 - fed_bytes as f64 / centralized_bytes as f64))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    match cfg.scenario {
        Scenario::Historical => run_historical(cfg),
        Scenario::ColdStart => run_cold_start(cfg),
        Scenario::KnowledgeTransfer => run_knowledge_transfer(cfg),
        Scenario::Centralized => run_centralized(cfg),
    }
}

pub fn run_historical(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let nodes = prepare_nodes(cfg)?;
    federated_report(cfg, Scenario::Historical, &nodes, WindowSchedule::All).map(|(r, _)| r)
}

pub fn run_cold_start(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let nodes = prepare_nodes(cfg)?;
    let schedule = WindowSchedule::Growing {
        step: cfg.cold_start_step,
    };
    federated_report(cfg, Scenario::ColdStart, &nodes, schedule).map(|(r, _)| r)
}

/// Federates the configured nodes, then scores `transfer.target` with the
/// final global model after recalibrating the threshold on the target's
/// leading batches. The target never trains.
pub fn run_knowledge_transfer(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let transfer = cfg
        .transfer
        .as_ref()
        .ok_or_else(|| HarnessError::Config("knowledge_transfer needs a [transfer] section".into()))?;
    let nodes = prepare_nodes(cfg)?;
    let (mut report, model) = federated_report(cfg, Scenario::KnowledgeTransfer, &nodes, WindowSchedule::All)?;
    let target = load_source(&transfer.target.source, cfg)?;
    report.detection.push(evaluate_transfer(
        &model,
        &transfer.target.id,
        target,
        transfer.calibration_fraction,
        cfg,
    )?);
    Ok(report)
}

/// One model trained on every node's fit windows for `centralized_epochs`,
/// evaluated per node. The network figure is what shipping the raw data
/// would cost.
pub fn run_centralized(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let nodes = prepare_nodes(cfg)?;
    let fit: Vec<_> = nodes.iter().flat_map(|n| n.fit.iter().cloned()).collect();
    let val: Vec<_> = nodes.iter().flat_map(|n| n.val.iter().cloned()).collect();
    let mut model = build_autoencoder(&cfg.model, cfg.seed)?;
    let history = train_epochs(&mut model, &fit, &val, &cfg.train, cfg.centralized_epochs, cfg.seed)?;
    for e in &history.epochs {
        log::debug!("centralized epoch {} loss {:.6} val {:?}", e.epoch_index, e.train_loss, e.val_loss);
    }
    let detection = evaluate_nodes(&model, &nodes, cfg, |_| Vec::new())?;
    Ok(ExperimentReport {
        scenario: Scenario::Centralized,
        rounds: Vec::new(),
        detection,
        network: NetworkSummary {
            federated_bytes: 0,
            setup_bytes: 0,
            round_bytes: Vec::new(),
            raw_bytes: nodes.iter().map(|n| n.raw_bytes).sum(),
            raw_original_bytes: nodes.iter().map(|n| n.raw_original_bytes).sum(),
        },
        wire_bytes: 0,
        untrained: false,
    })
}

fn node_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(1 + index as u64)
}

/// Settings for the `index`-th training node of an experiment.
pub fn node_config(cfg: &ExperimentConfig, id: &str, index: usize, schedule: WindowSchedule) -> NodeConfig {
    NodeConfig {
        train: cfg.train.clone(),
        rounds: cfg.rounds,
        epochs_per_round: cfg.epochs_per_round,
        seed: node_seed(cfg.seed, index),
        persist_optimizer: cfg.persist_optimizer,
        schedule,
        delta: cfg.delta,
        threshold_mode: cfg.threshold_mode,
        score_aggregation: cfg.score_aggregation,
        reference_unit: cfg.reference_unit,
        ..NodeConfig::new(id, cfg.model.clone())
    }
}

/// Runs the federation over prepared nodes on the in-process simulator.
pub fn federate(
    cfg: &ExperimentConfig,
    nodes: &[PreparedNode],
    schedule: WindowSchedule,
) -> Result<SimulationOutcome, HarnessError> {
    let initial = ModelWeights::from_model(&build_autoencoder(&cfg.model, cfg.seed)?);
    let trainers = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| TrainingNode::new(node_config(cfg, &n.id, i, schedule), n.node_data()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(simulate_federation(initial, trainers, cfg.rounds)?)
}

fn federated_report(
    cfg: &ExperimentConfig,
    scenario: Scenario,
    nodes: &[PreparedNode],
    schedule: WindowSchedule,
) -> Result<(ExperimentReport, AutoencoderModel<f32>), HarnessError> {
    let outcome = federate(cfg, nodes, schedule)?;
    let agg = &outcome.report;
    let rounds: Vec<RoundReport> = agg
        .rounds
        .iter()
        .map(|rec| RoundReport {
            round: rec.round,
            nodes: outcome
                .nodes
                .iter()
                .filter_map(|n| {
                    let log = n.logs().iter().find(|l| l.round == rec.round)?;
                    Some(NodeRoundStat {
                        node: n.client_id().to_string(),
                        train_loss: log.train_loss,
                        val_loss: log.val_loss,
                        windows_trained: log.windows_trained,
                        threshold: log.threshold,
                        train_duration: log.train_duration,
                    })
                })
                .collect(),
            bytes_sent: rec.bytes_sent,
            bytes_received: rec.bytes_received,
            duration: rec.duration,
            aborted: rec.aborted,
        })
        .collect();

    let mut model = build_autoencoder(&cfg.model, cfg.seed)?;
    agg.final_weights.load_into(&mut model)?;
    let detection = evaluate_nodes(&model, nodes, cfg, |id| {
        outcome
            .nodes
            .iter()
            .find(|n| n.client_id() == id)
            .map(|n| n.logs().iter().filter_map(|l| l.threshold).collect())
            .unwrap_or_default()
    })?;
    let network = NetworkSummary {
        federated_bytes: agg.total_bytes(),
        setup_bytes: agg.setup_bytes_sent + agg.setup_bytes_received,
        round_bytes: rounds.iter().map(RoundReport::bytes).collect(),
        raw_bytes: nodes.iter().map(|n| n.raw_bytes).sum(),
        raw_original_bytes: nodes.iter().map(|n| n.raw_original_bytes).sum(),
    };
    let report = ExperimentReport {
        scenario,
        rounds,
        detection,
        network,
        wire_bytes: outcome.wire_bytes,
        untrained: cfg.rounds == 0,
    };
    Ok((report, model))
}

/// Window errors of every batch of `node`.
fn batch_errors(
    model: &AutoencoderModel<f32>,
    node: &PreparedNode,
    cfg: &ExperimentConfig,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    batch_windows(&node.dataset, 0..node.dataset.len(), cfg.model.window_size)?
        .iter()
        .map(|w| Ok(window_errors(model, w)?))
        .collect()
}

/// Batch scores, plus the threshold set by the batches in `reference`.
fn score_and_calibrate(
    errors: &[Vec<f64>],
    reference: std::ops::Range<usize>,
    cfg: &ExperimentConfig,
) -> Result<(Vec<f64>, ThresholdModel), HarnessError> {
    let scores = errors
        .iter()
        .map(|e| score_windows(e, cfg.score_aggregation))
        .collect::<Result<Vec<_>, _>>()?;
    let res = reference_errors(&errors[reference], cfg.reference_unit, cfg.score_aggregation)?;
    let threshold = calibrate_threshold(&res, cfg.delta, cfg.threshold_mode)?;
    Ok((scores, threshold))
}

fn detection(
    id: &str,
    node: &PreparedNode,
    scores: Vec<f64>,
    threshold: &ThresholdModel,
    segment_of: impl Fn(usize) -> Segment,
    threshold_trace: Vec<f64>,
) -> Result<NodeDetection, HarnessError> {
    let batches = node.dataset.batches();
    let scores: Vec<BatchScore> = scores
        .into_iter()
        .enumerate()
        .map(|(i, score)| BatchScore {
            batch_index: i,
            timestamp: batches[i].timestamp,
            segment: segment_of(i),
            score,
            truth: batches[i].label,
            verdict: threshold.verdict(i, score).label,
        })
        .collect();
    let (verdicts, labels): (Vec<_>, Vec<Label>) = scores
        .iter()
        .filter(|s| s.segment == Segment::Test)
        .filter_map(|s| Some((threshold.verdict(s.batch_index, s.score), s.truth?)))
        .unzip();
    let metrics = if labels.is_empty() {
        None
    } else {
        Some(evaluate_detection(&verdicts, &labels)?)
    };
    Ok(NodeDetection {
        node: id.to_string(),
        threshold: threshold.threshold,
        threshold_trace,
        scores,
        metrics,
    })
}

/// Scores every batch of every node with `model`; each node's threshold
/// comes from its own validation batches.
pub fn evaluate_nodes(
    model: &AutoencoderModel<f32>,
    nodes: &[PreparedNode],
    cfg: &ExperimentConfig,
    trace: impl Fn(&str) -> Vec<f64>,
) -> Result<Vec<NodeDetection>, HarnessError> {
    let scored: Vec<Result<Vec<Vec<f64>>, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> = nodes
            .iter()
            .map(|n| s.spawn(move || batch_errors(model, n, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scoring thread panicked"))
            .collect()
    });
    nodes
        .iter()
        .zip(scored)
        .map(|(node, errors)| {
            let (scores, threshold) = score_and_calibrate(&errors?, node.split.validation.clone(), cfg)?;
            let split = &node.split;
            detection(
                &node.id,
                node,
                scores,
                &threshold,
                |i| {
                    if split.fit.contains(&i) {
                        Segment::Fit
                    } else if split.validation.contains(&i) {
                        Segment::Validation
                    } else {
                        Segment::Test
                    }
                },
                trace(&node.id),
            )
        })
        .collect()
}

/// Scores `target` with a model trained elsewhere. The leading
/// `calibration_fraction` of batches (at least two, at most all but one) is
/// treated as healthy and sets the threshold; metrics cover the rest.
pub fn evaluate_transfer(
    model: &AutoencoderModel<f32>,
    id: &str,
    target: LoadedSource,
    calibration_fraction: f64,
    cfg: &ExperimentConfig,
) -> Result<NodeDetection, HarnessError> {
    let dataset = target.dataset;
    if dataset.feature_count != model.config().feature_count {
        return Err(HarnessError::Config(format!(
            "transfer target {id} has {} features, model expects {}",
            dataset.feature_count,
            model.config().feature_count
        )));
    }
    let n = dataset.len();
    if n < 3 {
        return Err(HarnessError::Config(format!("transfer target {id} needs at least 3 batches")));
    }
    let k = ((calibration_fraction * n as f64).ceil() as usize).clamp(2, n - 1);
    let raw_bytes = dataset.raw_bytes();
    let dataset = if cfg.standardize {
        standardize(&dataset, 0..k)?.0
    } else {
        dataset
    };
    let node = PreparedNode {
        id: id.to_string(),
        dataset,
        split: crate::signal::Split {
            fit: 0..0,
            validation: 0..k,
            test: k..n,
        },
        fit: Vec::new(),
        val: Vec::new(),
        calibration: Vec::new(),
        raw_bytes,
        raw_original_bytes: target.raw_original_bytes,
    };
    let (scores, threshold) = score_and_calibrate(&batch_errors(model, &node, cfg)?, 0..k, cfg)?;
    detection(
        id,
        &node,
        scores,
        &threshold,
        |i| if i < k { Segment::Calibration } else { Segment::Test },
        Vec::new(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SynthConfig;

    #[test]
    fn cold_start_schedule() {
        assert_eq!(cold_start_windows(1, 10_000).unwrap(), 64);
        assert_eq!(cold_start_windows(10, 10_000).unwrap(), 640);
        assert_eq!(cold_start_windows(100, 10_000).unwrap(), 6400);
        assert_eq!(cold_start_windows(100, 1024).unwrap(), 1024);
        assert!(cold_start_windows(0, 10).is_err());
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(network_reduction(5, 5).unwrap(), 0.0);
        let r = network_reduction(6_300_000, 806_000_000).unwrap();
        assert!((r - 99.218).abs() < 1e-3, "{r}");
        assert!(network_reduction(10, 5).unwrap() < 0.0);
        assert!(network_reduction(1, 0).is_err());
    }

    fn tiny(n_nodes: usize, rounds: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::synthetic(n_nodes, 4);
        for n in &mut cfg.nodes {
            if let crate::harness::DataSource::Synth(s) = &mut n.source {
                *s = SynthConfig {
                    n_batches: 20,
                    batch_len: 200,
                    anomaly_indices: vec![17, 19],
                    ..s.clone()
                };
            }
        }
        cfg.rounds = rounds;
        cfg
    }

    #[test]
    fn zero_rounds_flags_untrained() {
        let r = run_historical(&tiny(2, 0)).unwrap();
        assert!(r.untrained);
        assert!(r.rounds.is_empty());
        assert_eq!(r.detection.len(), 2);
        assert_eq!(r.detection[0].scores.len(), 20);
        assert!(r.detection[0].threshold_trace.is_empty());
        assert_eq!(r.network.federated_bytes, r.wire_bytes);
    }

    #[test]
    fn accounting_matches_wire() {
        let r = run_cold_start(&tiny(2, 3)).unwrap();
        assert_eq!(r.rounds.len(), 3);
        let sum: u64 = r.network.setup_bytes + r.rounds.iter().map(RoundReport::bytes).sum::<u64>();
        assert_eq!(sum, r.wire_bytes);
        assert!(r.network.rounds_constant());
        for (k, round) in r.rounds.iter().enumerate() {
            for n in &round.nodes {
                assert_eq!(n.windows_trained, (64 * (k + 1)).min(24));
            }
        }
        assert_eq!(r.detection[0].threshold_trace.len(), 3);
        let last = *r.detection[0].threshold_trace.last().unwrap();
        assert_eq!(last, r.detection[0].threshold);
    }

    #[test]
    fn transfer_feature_mismatch() {
        let cfg = tiny(1, 0);
        let model = build_autoencoder(&cfg.model, 0).unwrap();
        let target = load_source(
            &crate::harness::DataSource::Synth(SynthConfig {
                n_features: 1,
                n_batches: 10,
                anomaly_indices: vec![],
                ..SynthConfig::default()
            }),
            &cfg,
        )
        .unwrap();
        assert!(matches!(
            evaluate_transfer(&model, "t", target, 0.1, &cfg),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn transfer_calibrates_on_leading_batches() {
        let cfg = tiny(1, 0);
        let model = build_autoencoder(&cfg.model, 0).unwrap();
        let target = load_source(&cfg.nodes[0].source, &cfg).unwrap();
        let d = evaluate_transfer(&model, "t", target, 0.1, &cfg).unwrap();
        assert_eq!(d.scores.iter().filter(|s| s.segment == Segment::Calibration).count(), 2);
        assert!(d.metrics.is_some());
    }
}
