//! Deterministic single-threaded federation.
//!
//! Every message is encoded to its wire frame and decoded by the receiver.
//! The aggregator drains its inbox first, then every node with a pending
//! frame handles one (concurrently, since nodes share nothing) and their
//! replies are queued in node order, repeating until the federation ends.
//! If nothing is left in flight while the aggregator still waits, the
//! deadline is considered passed.

use std::collections::VecDeque;

use super::aggregator::{AggregationReport, Aggregator, AggregatorConfig};
use super::node::TrainingNode;
use super::weights::ModelWeights;
use super::FedError;

#[derive(Debug)]
pub struct SimulationOutcome {
    pub report: AggregationReport,
    pub nodes: Vec<TrainingNode>,
    /// Every frame byte that crossed the simulated network.
    pub wire_bytes: u64,
}

pub fn simulate_federation(
    initial: ModelWeights,
    mut nodes: Vec<TrainingNode>,
    rounds: u64,
) -> Result<SimulationOutcome, FedError> {
    let mut agg = Aggregator::<usize>::new(
        AggregatorConfig {
            expected_clients: nodes.len(),
            rounds,
        },
        initial,
    )?;
    let mut to_agg: VecDeque<(usize, Vec<u8>)> = VecDeque::new();
    let mut to_node: Vec<VecDeque<Vec<u8>>> = vec![VecDeque::new(); nodes.len()];
    let mut wire_bytes = 0u64;
    for (i, n) in nodes.iter().enumerate() {
        to_agg.push_back((i, n.register_frame()));
    }
    loop {
        let mut progressed = false;
        while let Some((from, frame)) = to_agg.pop_front() {
            progressed = true;
            wire_bytes += frame.len() as u64;
            for o in agg.handle_frame(from, &frame) {
                to_node[o.to].push_back(o.frame);
            }
        }
        // nodes are independent, so each handles its next frame on its own
        // thread; outputs are queued in node order to keep runs reproducible
        let work: Vec<(usize, &mut TrainingNode, Vec<u8>)> = nodes
            .iter_mut()
            .enumerate()
            .filter_map(|(i, n)| to_node[i].pop_front().map(|f| (i, n, f)))
            .collect();
        progressed |= !work.is_empty();
        wire_bytes += work.iter().map(|(_, _, f)| f.len() as u64).sum::<u64>();
        let results: Vec<(usize, Result<_, FedError>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = work
                .into_iter()
                .map(|(i, node, frame)| (i, scope.spawn(move || node.handle_frame(&frame))))
                .collect();
            handles
                .into_iter()
                .map(|(i, h)| (i, h.join().expect("node thread panicked")))
                .collect()
        });
        for (i, result) in results {
            for f in result?.send {
                to_agg.push_back((i, f));
            }
        }
        let nodes_done = nodes.iter().all(TrainingNode::is_done);
        if agg.is_finished() && nodes_done && to_agg.is_empty() && to_node.iter().all(VecDeque::is_empty) {
            break;
        }
        if !progressed {
            if agg.is_waiting() {
                agg.on_timeout();
            }
            return Err(FedError::Aborted(
                agg.report()
                    .abort_reason
                    .unwrap_or_else(|| "federation stalled".into()),
            ));
        }
    }
    Ok(SimulationOutcome {
        report: agg.report(),
        nodes,
        wire_bytes,
    })
}
