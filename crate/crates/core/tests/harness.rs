use std::fs;

use fedvib::harness::{
    export_results, read_scores, run_experiment, DataSource, ExperimentConfig, NodeSpec, RoundReport,
    Scenario, Segment, TransferSpec,
};
use fedvib::signal::{Label, SynthConfig};

/// Short version of the synthetic preset: 40 batches of 400 samples.
fn small(n_nodes: usize, rounds: u64, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::synthetic(n_nodes, seed);
    for n in &mut cfg.nodes {
        if let DataSource::Synth(s) = &mut n.source {
            s.n_batches = 40;
            s.batch_len = 400;
            s.anomaly_indices = vec![33, 37];
        }
    }
    cfg.rounds = rounds;
    cfg
}

#[test]
fn export_round_trip() {
    let cfg = small(2, 2, 1);
    let report = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_results(&report, dir.path()).unwrap();
    for f in ["scores.csv", "rounds.csv", "metrics.csv", "network.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let rows = read_scores(&dir.path().join("scores.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 40);
    for d in &report.detection {
        let mine: Vec<_> = rows.iter().filter(|r| r.node == d.node).collect();
        assert_eq!(mine.len(), d.scores.len());
        let flagged = mine.iter().filter(|r| r.verdict == Label::Anomalous).count();
        assert_eq!(flagged, d.above_threshold().count());
        for (r, s) in mine.iter().zip(&d.scores) {
            assert_eq!((r.batch_index, r.segment, r.score, r.label), (s.batch_index, s.segment, s.score, s.truth));
            assert_eq!(r.threshold, d.threshold);
        }
    }
    let rounds = fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 1 + 2);
}

#[test]
fn identical_config_gives_identical_metrics() {
    let cfg = small(2, 2, 5);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    export_results(&run_experiment(&cfg).unwrap(), a.path()).unwrap();
    export_results(&run_experiment(&cfg).unwrap(), b.path()).unwrap();
    for f in ["metrics.csv", "scores.csv", "network.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn round_bytes_add_up_to_wire_bytes() {
    let mut cfg = small(3, 4, 2);
    cfg.scenario = Scenario::ColdStart;
    cfg.cold_start_step = 8;
    let report = run_experiment(&cfg).unwrap();
    let rounds: u64 = report.rounds.iter().map(RoundReport::bytes).sum();
    assert_eq!(rounds + report.network.setup_bytes, report.wire_bytes);
    assert_eq!(report.network.federated_bytes, report.wire_bytes);
    for (k, r) in report.rounds.iter().enumerate() {
        assert!(r.nodes.iter().all(|n| n.windows_trained == 8 * (k + 1)));
    }
}

#[test]
fn centralized_reports_raw_volume() {
    let mut cfg = small(2, 0, 3);
    cfg.scenario = Scenario::Centralized;
    cfg.centralized_epochs = 2;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.wire_bytes, 0);
    assert!(report.rounds.is_empty());
    assert_eq!(report.network.raw_bytes, 2 * 40 * 400 * 3 * 4);
    assert_eq!(report.detection.len(), 2);
}

#[test]
fn knowledge_transfer_scores_target_without_training_it() {
    let mut cfg = small(2, 2, 4);
    cfg.scenario = Scenario::KnowledgeTransfer;
    cfg.transfer = Some(TransferSpec {
        target: NodeSpec {
            id: "site_b".into(),
            source: DataSource::Synth(SynthConfig {
                n_batches: 30,
                batch_len: 400,
                anomaly_indices: vec![27, 29],
                seed: 77,
                ..SynthConfig::default()
            }),
        },
        calibration_fraction: 0.1,
    });
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.detection.len(), 3);
    let target = report.node("site_b").unwrap();
    assert!(target.threshold_trace.is_empty());
    let calib = target.scores.iter().filter(|s| s.segment == Segment::Calibration).count();
    assert_eq!(calib, 3);
    assert_eq!(report.rounds.iter().map(|r| r.nodes.len()).max(), Some(2));
}

#[test]
fn zero_rounds_is_flagged_untrained() {
    let report = run_experiment(&small(1, 0, 0)).unwrap();
    assert!(report.untrained);
    assert!(report.rounds.is_empty());
    assert_eq!(report.detection[0].scores.len(), 40);
}
