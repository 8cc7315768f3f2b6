//! CSV output for plotting and comparison.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, HarnessError, Segment};
use crate::signal::Label;

/// One row of `scores.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub node: String,
    pub batch_index: usize,
    pub timestamp: f64,
    pub segment: Segment,
    pub score: f64,
    pub threshold: f64,
    /// Ground truth, empty when unknown.
    pub label: Option<Label>,
    pub verdict: Label,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>, HarnessError> {
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes `scores.csv`, `rounds.csv`, `metrics.csv` and `network.csv`
/// into `out_dir`, creating it if needed.
pub fn export_results(report: &ExperimentReport, out_dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;

    let mut w = writer(out_dir, "scores.csv")?;
    for d in &report.detection {
        for s in &d.scores {
            w.serialize(ScoreRow {
                node: d.node.clone(),
                batch_index: s.batch_index,
                timestamp: s.timestamp,
                segment: s.segment,
                score: s.score,
                threshold: d.threshold,
                label: s.truth,
                verdict: s.verdict,
            })?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(out_dir.join("scores.csv"), e))?;

    // one row per round; per-node columns are suffixed with the node id
    let mut w = writer(out_dir, "rounds.csv")?;
    let ids: Vec<&str> = report
        .rounds
        .first()
        .map(|r| r.nodes.iter().map(|n| n.node.as_str()).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = [
        "round",
        "bytes_sent",
        "bytes_received",
        "windows_trained",
        "duration_s",
        "aborted",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for id in &ids {
        for col in ["train_loss", "val_loss", "windows_trained", "threshold", "train_s"] {
            header.push(format!("{col}.{id}"));
        }
    }
    w.write_record(&header)?;
    for r in &report.rounds {
        let mut row = vec![
            r.round.to_string(),
            r.bytes_sent.to_string(),
            r.bytes_received.to_string(),
            r.windows_trained().to_string(),
            r.duration.as_secs_f64().to_string(),
            r.aborted.to_string(),
        ];
        for id in &ids {
            match r.nodes.iter().find(|n| n.node == *id) {
                Some(n) => row.extend([
                    n.train_loss.to_string(),
                    opt(n.val_loss),
                    n.windows_trained.to_string(),
                    opt(n.threshold),
                    n.train_duration.as_secs_f64().to_string(),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io(out_dir.join("rounds.csv"), e))?;

    let mut w = writer(out_dir, "metrics.csv")?;
    w.write_record([
        "node",
        "precision",
        "recall",
        "f1",
        "true_positives",
        "false_positives",
        "false_negatives",
        "true_negatives",
        "threshold",
    ])?;
    for d in &report.detection {
        let mut row = vec![d.node.clone()];
        match &d.metrics {
            Some(m) => row.extend([
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.true_positives.to_string(),
                m.false_positives.to_string(),
                m.false_negatives.to_string(),
                m.true_negatives.to_string(),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), 7)),
        }
        row.push(d.threshold.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io(out_dir.join("metrics.csv"), e))?;

    let n = &report.network;
    let mut w = writer(out_dir, "network.csv")?;
    w.write_record(["metric", "value"])?;
    let rows: Vec<(&str, String)> = vec![
        ("scenario", report.scenario.as_str().to_string()),
        ("untrained", report.untrained.to_string()),
        ("federated_bytes", n.federated_bytes.to_string()),
        ("setup_bytes", n.setup_bytes.to_string()),
        ("rounds", n.round_bytes.len().to_string()),
        ("round_bytes_min", n.round_bytes.iter().min().map(u64::to_string).unwrap_or_default()),
        ("round_bytes_max", n.round_bytes.iter().max().map(u64::to_string).unwrap_or_default()),
        ("raw_bytes", n.raw_bytes.to_string()),
        ("raw_original_bytes", n.raw_original_bytes.to_string()),
        ("reduction_pct", opt(n.reduction())),
        ("reduction_original_pct", opt(n.reduction_original())),
    ];
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush().map_err(|e| HarnessError::io(out_dir.join("network.csv"), e))?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, HarnessError> {
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<Result<Vec<ScoreRow>, _>>()
        .map_err(HarnessError::from)
}
