//! Aggregation node: registration, synchronous rounds, FedAvg, redistribution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Debug;
use std::hash::Hash;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use super::codec::{decode_message, encode_message, read_frame, ErrorCode, Message};
use super::weights::{apply_delta, fedavg, ModelWeights, WeightDelta};
use super::FedError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AggregatorConfig {
    pub expected_clients: usize,
    pub rounds: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RoundStatus {
    Collecting,
    Aggregated,
    Distributed,
}

/// Bookkeeping of the round in progress.
#[derive(Clone, Debug)]
pub struct RoundState {
    pub round: u64,
    pub global_weights: ModelWeights,
    pub expected_clients: BTreeSet<String>,
    /// Delta and reported window count per client.
    pub received: BTreeMap<String, (WeightDelta, u64)>,
    pub status: RoundStatus,
}

impl RoundState {
    pub fn new(round: u64, global_weights: ModelWeights, expected_clients: BTreeSet<String>) -> Self {
        Self {
            round,
            global_weights,
            expected_clients,
            received: BTreeMap::new(),
            status: RoundStatus::Collecting,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.received.len() == self.expected_clients.len()
            && self.received.keys().eq(self.expected_clients.iter())
    }
}

/// Averages the collected deltas (in client-id order) into the global model.
///
/// Returns the new global weights and the next round number.
pub fn aggregation_round(state: &mut RoundState) -> Result<(ModelWeights, u64), FedError> {
    if state.status != RoundStatus::Collecting {
        return Err(FedError::State(format!(
            "round {} is {:?}, not collecting",
            state.round, state.status
        )));
    }
    if state.expected_clients.is_empty() || !state.is_complete() {
        let missing: Vec<&String> = state
            .expected_clients
            .iter()
            .filter(|c| !state.received.contains_key(*c))
            .collect();
        return Err(FedError::State(format!(
            "round {} still waiting for {missing:?}",
            state.round
        )));
    }
    let deltas: Vec<WeightDelta> = state.received.values().map(|(d, _)| d.clone()).collect();
    let mean = fedavg(&deltas)?;
    let next = apply_delta(&state.global_weights, &mean)?;
    state.global_weights = next.clone();
    state.status = RoundStatus::Aggregated;
    Ok((next, state.round + 1))
}

/// One frame addressed to a peer.
#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing<P> {
    pub to: P,
    pub frame: Vec<u8>,
}

/// Completed (or aborted) round as seen by the aggregator.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    /// `(client_id, windows_trained)` in client-id order.
    pub participants: Vec<(String, u64)>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub duration: Duration,
    pub aborted: bool,
}

#[derive(Clone, Debug)]
pub struct AggregationReport {
    pub rounds: Vec<RoundRecord>,
    /// Registration traffic and the first distribution.
    pub setup_bytes_sent: u64,
    pub setup_bytes_received: u64,
    pub final_weights: ModelWeights,
    pub abort_reason: Option<String>,
}

impl AggregationReport {
    pub fn total_bytes(&self) -> u64 {
        self.setup_bytes_sent
            + self.setup_bytes_received
            + self
                .rounds
                .iter()
                .map(|r| r.bytes_sent + r.bytes_received)
                .sum::<u64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Registering,
    Running,
    Finished,
    Aborted,
}

/// Sans-IO aggregation node keyed by an opaque peer handle `P`.
#[derive(Debug)]
pub struct Aggregator<P> {
    config: AggregatorConfig,
    phase: Phase,
    state: RoundState,
    client_of: HashMap<P, String>,
    peer_of: BTreeMap<String, P>,
    /// Clients that registered mid-round and join the next one.
    waiting: BTreeSet<String>,
    records: Vec<RoundRecord>,
    setup: TrafficCounter,
    current: TrafficCounter,
    round_started: Instant,
    abort_reason: Option<String>,
}

#[derive(Debug, Default, Clone, Copy)]
struct TrafficCounter {
    sent: u64,
    received: u64,
}

impl<P: Clone + Eq + Hash + Debug> Aggregator<P> {
    pub fn new(config: AggregatorConfig, initial: ModelWeights) -> Result<Self, FedError> {
        if config.expected_clients == 0 {
            return Err(FedError::State("aggregator needs at least one expected client".into()));
        }
        Ok(Self {
            config,
            phase: Phase::Registering,
            state: RoundState::new(0, initial, BTreeSet::new()),
            client_of: HashMap::new(),
            peer_of: BTreeMap::new(),
            waiting: BTreeSet::new(),
            records: Vec::new(),
            setup: TrafficCounter::default(),
            current: TrafficCounter::default(),
            round_started: Instant::now(),
            abort_reason: None,
        })
    }

    pub fn round(&self) -> u64 {
        self.state.round
    }

    pub fn round_state(&self) -> &RoundState {
        &self.state
    }

    pub fn global_weights(&self) -> &ModelWeights {
        &self.state.global_weights
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    pub fn is_aborted(&self) -> bool {
        self.phase == Phase::Aborted
    }

    /// True while the aggregator is waiting on clients.
    pub fn is_waiting(&self) -> bool {
        matches!(self.phase, Phase::Registering | Phase::Running)
    }

    pub fn report(&self) -> AggregationReport {
        AggregationReport {
            rounds: self.records.clone(),
            setup_bytes_sent: self.setup.sent,
            setup_bytes_received: self.setup.received,
            final_weights: self.state.global_weights.clone(),
            abort_reason: self.abort_reason.clone(),
        }
    }

    fn counter(&mut self) -> &mut TrafficCounter {
        if self.phase == Phase::Registering {
            &mut self.setup
        } else {
            &mut self.current
        }
    }

    fn send(&mut self, out: &mut Vec<Outgoing<P>>, to: P, msg: &Message) {
        let frame = encode_message(msg);
        self.counter().sent += frame.len() as u64;
        out.push(Outgoing { to, frame });
    }

    fn error(&mut self, out: &mut Vec<Outgoing<P>>, to: P, code: ErrorCode, text: String) {
        log::warn!("rejecting message from {to:?}: {text}");
        self.send(out, to, &Message::Error { code, text });
    }

    /// Consumes one inbound frame from `peer`.
    pub fn handle_frame(&mut self, peer: P, frame: &[u8]) -> Vec<Outgoing<P>> {
        self.counter().received += frame.len() as u64;
        let mut out = Vec::new();
        let msg = match decode_message(frame) {
            Ok(m) => m,
            Err(e) => {
                self.error(&mut out, peer, ErrorCode::UnexpectedMessage, e.to_string());
                return out;
            }
        };
        match msg {
            Message::Register { client_id } => self.on_register(&mut out, peer, client_id),
            Message::DeltaSubmission {
                client_id,
                round,
                delta,
                windows_trained,
            } => self.on_delta(&mut out, peer, client_id, round, delta, windows_trained),
            Message::Ack => {}
            Message::Error { code, text } => {
                log::warn!("client {peer:?} reported {code:?}: {text}");
            }
            Message::GlobalModel { .. } => self.error(
                &mut out,
                peer,
                ErrorCode::UnexpectedMessage,
                "clients must not send global models".into(),
            ),
        }
        out
    }

    fn on_register(&mut self, out: &mut Vec<Outgoing<P>>, peer: P, client_id: String) {
        if self.peer_of.contains_key(&client_id) || self.client_of.contains_key(&peer) {
            let text = format!("client id {client_id:?} already registered");
            self.error(out, peer, ErrorCode::DuplicateClient, text);
            return;
        }
        self.peer_of.insert(client_id.clone(), peer.clone());
        self.client_of.insert(peer.clone(), client_id.clone());
        match self.phase {
            Phase::Registering => {
                if self.peer_of.len() == self.config.expected_clients {
                    self.phase = Phase::Running;
                    self.start_round(out, self.peer_of.keys().cloned().collect(), true);
                    if self.config.rounds == 0 {
                        self.phase = Phase::Finished;
                        self.state.status = RoundStatus::Distributed;
                    }
                }
            }
            Phase::Running => {
                // joins next round, but gets the current model right away
                self.waiting.insert(client_id);
                let msg = Message::GlobalModel {
                    round: self.state.round,
                    weights: self.state.global_weights.clone(),
                };
                self.send(out, peer, &msg);
            }
            Phase::Finished | Phase::Aborted => {
                let text = "federation is no longer running".to_string();
                self.error(out, peer, ErrorCode::UnexpectedMessage, text);
            }
        }
    }

    fn start_round(&mut self, out: &mut Vec<Outgoing<P>>, expected: BTreeSet<String>, setup: bool) {
        let msg = Message::GlobalModel {
            round: self.state.round,
            weights: self.state.global_weights.clone(),
        };
        let frame = encode_message(&msg);
        for client in &expected {
            let to = self.peer_of[client].clone();
            if setup {
                self.setup.sent += frame.len() as u64;
            } else {
                self.current.sent += frame.len() as u64;
            }
            out.push(Outgoing {
                to,
                frame: frame.clone(),
            });
        }
        self.state.expected_clients = expected;
        self.round_started = Instant::now();
    }

    fn on_delta(
        &mut self,
        out: &mut Vec<Outgoing<P>>,
        peer: P,
        client_id: String,
        round: u64,
        delta: WeightDelta,
        windows_trained: u64,
    ) {
        if self.client_of.get(&peer) != Some(&client_id) {
            let text = format!("delta from unregistered or mismatched client {client_id:?}");
            self.error(out, peer, ErrorCode::UnexpectedMessage, text);
            return;
        }
        if self.phase != Phase::Running {
            let text = "no round is collecting".to_string();
            self.error(out, peer, ErrorCode::UnexpectedMessage, text);
            return;
        }
        if !self.state.expected_clients.contains(&client_id) {
            if round <= self.state.round {
                // a late joiner's warm-up round; not part of any aggregation
                self.send(out, peer, &Message::Ack);
                return;
            }
        }
        if round != self.state.round || delta.base_round != self.state.round {
            let text = format!(
                "delta for round {round} (base {}) while collecting round {}",
                delta.base_round, self.state.round
            );
            self.error(out, peer, ErrorCode::UnexpectedMessage, text);
            return;
        }
        if self.state.received.contains_key(&client_id) {
            let text = format!("second delta from {client_id:?} in round {round}");
            self.error(out, peer, ErrorCode::UnexpectedMessage, text);
            return;
        }
        if let Err(e) = super::weights::apply_delta(&self.state.global_weights, &delta) {
            self.error(out, peer, ErrorCode::LayoutMismatch, e.to_string());
            return;
        }
        self.state.received.insert(client_id, (delta, windows_trained));
        self.send(out, peer, &Message::Ack);
        if self.state.is_complete() {
            self.finish_round(out);
        }
    }

    fn finish_round(&mut self, out: &mut Vec<Outgoing<P>>) {
        let duration = self.round_started.elapsed();
        let participants: Vec<(String, u64)> = self
            .state
            .received
            .iter()
            .map(|(c, (_, w))| (c.clone(), *w))
            .collect();
        let (next, next_round) = match aggregation_round(&mut self.state) {
            Ok(v) => v,
            Err(e) => {
                self.abort(out, format!("aggregation failed: {e}"));
                return;
            }
        };
        let mut expected: BTreeSet<String> = self.state.expected_clients.clone();
        expected.append(&mut self.waiting);
        self.state = RoundState::new(next_round, next, BTreeSet::new());
        // the redistribution belongs to the round that produced it
        self.start_round(out, expected, false);
        self.state.status = RoundStatus::Collecting;
        let traffic = std::mem::take(&mut self.current);
        self.records.push(RoundRecord {
            round: next_round - 1,
            participants,
            bytes_sent: traffic.sent,
            bytes_received: traffic.received,
            duration,
            aborted: false,
        });
        log::info!("round {} aggregated", next_round - 1);
        if next_round >= self.config.rounds {
            self.phase = Phase::Finished;
            self.state.status = RoundStatus::Distributed;
        }
    }

    fn abort(&mut self, out: &mut Vec<Outgoing<P>>, reason: String) {
        log::error!("{reason}");
        let peers: Vec<P> = self.peer_of.values().cloned().collect();
        for p in peers {
            self.send(
                out,
                p,
                &Message::Error {
                    code: ErrorCode::RoundAborted,
                    text: reason.clone(),
                },
            );
        }
        if self.phase == Phase::Running {
            let traffic = std::mem::take(&mut self.current);
            self.records.push(RoundRecord {
                round: self.state.round,
                participants: self.state.received.iter().map(|(c, (_, w))| (c.clone(), *w)).collect(),
                bytes_sent: traffic.sent,
                bytes_received: traffic.received,
                duration: self.round_started.elapsed(),
                aborted: true,
            });
        }
        self.phase = Phase::Aborted;
        self.abort_reason = Some(reason);
    }

    /// Called when clients stayed silent past the deadline: aborts the
    /// federation without partial aggregation.
    pub fn on_timeout(&mut self) -> Vec<Outgoing<P>> {
        let mut out = Vec::new();
        let reason = match self.phase {
            Phase::Registering => format!(
                "timed out with {} of {} clients registered",
                self.peer_of.len(),
                self.config.expected_clients
            ),
            Phase::Running => {
                let missing: Vec<&String> = self
                    .state
                    .expected_clients
                    .iter()
                    .filter(|c| !self.state.received.contains_key(*c))
                    .collect();
                format!(
                    "round {} timed out with {} of {} deltas; missing {:?}",
                    self.state.round,
                    self.state.received.len(),
                    self.state.expected_clients.len(),
                    missing
                )
            }
            Phase::Finished | Phase::Aborted => return out,
        };
        self.abort(&mut out, reason);
        out
    }

    /// Forgets a peer whose connection closed. Its round slot stays open
    /// until the deadline passes.
    pub fn on_disconnect(&mut self, peer: &P) {
        if let Some(client) = self.client_of.get(peer) {
            log::warn!("client {client:?} disconnected");
        }
    }
}

enum Event {
    Connected(u64, TcpStream),
    Frame(u64, Vec<u8>),
    Closed(u64),
}

/// Runs an aggregator on `listener` until the last round is distributed.
///
/// Each connection gets a reader thread; every state change happens on the
/// calling thread, which is also the only writer to the sockets. Silence
/// longer than `timeout` aborts the federation.
pub fn aggregation_node_run(
    listener: TcpListener,
    mut aggregator: Aggregator<u64>,
    timeout: Duration,
) -> Result<AggregationReport, FedError> {
    let (tx, rx) = mpsc::channel::<Event>();
    let stop = Arc::new(AtomicBool::new(false));
    listener.set_nonblocking(true)?;
    let acceptor = {
        let stop = stop.clone();
        let tx = tx.clone();
        thread::spawn(move || {
            let mut next_id = 0u64;
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let id = next_id;
                        next_id += 1;
                        if stream.set_nonblocking(false).is_err() {
                            continue;
                        }
                        let Ok(reader) = stream.try_clone() else { continue };
                        if tx.send(Event::Connected(id, stream)).is_err() {
                            return;
                        }
                        let tx = tx.clone();
                        thread::spawn(move || {
                            let mut reader = reader;
                            loop {
                                match read_frame(&mut reader) {
                                    Ok(Some(frame)) => {
                                        if tx.send(Event::Frame(id, frame)).is_err() {
                                            return;
                                        }
                                    }
                                    _ => {
                                        let _ = tx.send(Event::Closed(id));
                                        return;
                                    }
                                }
                            }
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(5))
                    }
                    Err(_) => thread::sleep(Duration::from_millis(5)),
                }
            }
        })
    };
    drop(tx);

    let mut writers: HashMap<u64, TcpStream> = HashMap::new();
    let deliver = |writers: &mut HashMap<u64, TcpStream>, out: Vec<Outgoing<u64>>| {
        for o in out {
            if let Some(w) = writers.get_mut(&o.to) {
                if let Err(e) = w.write_all(&o.frame) {
                    log::warn!("write to connection {} failed: {e}", o.to);
                }
            }
        }
    };
    let result = loop {
        if aggregator.is_finished() {
            break Ok(aggregator.report());
        }
        match rx.recv_timeout(timeout) {
            Ok(Event::Connected(id, stream)) => {
                writers.insert(id, stream);
            }
            Ok(Event::Frame(id, frame)) => {
                let out = aggregator.handle_frame(id, &frame);
                deliver(&mut writers, out);
            }
            Ok(Event::Closed(id)) => aggregator.on_disconnect(&id),
            Err(_) => {
                let out = aggregator.on_timeout();
                deliver(&mut writers, out);
                break Err(FedError::Aborted(
                    aggregator.report().abort_reason.unwrap_or_else(|| "timeout".into()),
                ));
            }
        }
    };
    stop.store(true, Ordering::Relaxed);
    let _ = acceptor.join();
    for (_, w) in writers {
        let _ = w.shutdown(std::net::Shutdown::Write);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed::compute_delta;
    use crate::nn::{ParamSet, Tensor};

    fn toy(values: &[f32]) -> ModelWeights {
        let mut p = ParamSet::new();
        p.push("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        ModelWeights::new(p).unwrap()
    }

    fn register(agg: &mut Aggregator<u32>, peer: u32, id: &str) -> Vec<Outgoing<u32>> {
        agg.handle_frame(peer, &encode_message(&Message::Register { client_id: id.into() }))
    }

    fn submit(agg: &mut Aggregator<u32>, peer: u32, id: &str, round: u64, local: &[f32]) -> Vec<Outgoing<u32>> {
        let delta = compute_delta(&toy(local), agg.global_weights(), round).unwrap();
        agg.handle_frame(
            peer,
            &encode_message(&Message::DeltaSubmission {
                client_id: id.into(),
                round,
                delta,
                windows_trained: 8,
            }),
        )
    }

    fn decoded(out: &[Outgoing<u32>]) -> Vec<(u32, Message)> {
        out.iter().map(|o| (o.to, decode_message(&o.frame).unwrap())).collect()
    }

    #[test]
    fn round_state_rejects_premature_aggregation() {
        let mut s = RoundState::new(0, toy(&[1.0]), ["a".to_string(), "b".to_string()].into());
        assert!(matches!(aggregation_round(&mut s), Err(FedError::State(_))));
        let d = compute_delta(&toy(&[2.0]), &toy(&[1.0]), 0).unwrap();
        s.received.insert("a".into(), (d.clone(), 1));
        assert!(aggregation_round(&mut s).is_err());
        s.received.insert("b".into(), (d, 1));
        let (w, next) = aggregation_round(&mut s).unwrap();
        assert_eq!((w.params().get("w").unwrap().data(), next), (&[2.0f32][..], 1));
        assert_eq!(s.status, RoundStatus::Aggregated);
        assert!(aggregation_round(&mut s).is_err());
    }

    #[test]
    fn toy_rounds_average_deltas() {
        let mut agg = Aggregator::new(AggregatorConfig { expected_clients: 3, rounds: 1 }, toy(&[1.0, 2.0, 3.0])).unwrap();
        assert!(register(&mut agg, 0, "a").is_empty());
        assert!(register(&mut agg, 1, "b").is_empty());
        let out = register(&mut agg, 2, "c");
        assert_eq!(out.len(), 3);
        assert!(submit(&mut agg, 0, "a", 0, &[1.5, 2.0, 3.0]).len() == 1);
        submit(&mut agg, 2, "c", 0, &[1.0, 2.0, 6.0]);
        let out = submit(&mut agg, 1, "b", 0, &[1.0, 2.75, 3.0]);
        let msgs = decoded(&out);
        assert_eq!(msgs[0], (1, Message::Ack));
        assert_eq!(msgs.len(), 4);
        // 1 + 0.5/3, 2 + 0.75/3, 3 + 3/3
        let expected = toy(&[(1.0f64 + 0.5 / 3.0) as f32, 2.25, 4.0]);
        assert!(agg.global_weights().bitwise_eq(&expected));
        assert!(agg.is_finished());
        assert_eq!(agg.records().len(), 1);
        assert_eq!(agg.records()[0].participants.len(), 3);
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut agg = Aggregator::new(AggregatorConfig { expected_clients: 2, rounds: 1 }, toy(&[0.0])).unwrap();
        register(&mut agg, 0, "a");
        let out = decoded(&register(&mut agg, 1, "a"));
        assert!(matches!(out[0].1, Message::Error { code: ErrorCode::DuplicateClient, .. }));
    }

    #[test]
    fn timeout_aborts_without_partial_aggregation() {
        let mut agg = Aggregator::new(AggregatorConfig { expected_clients: 4, rounds: 2 }, toy(&[0.0])).unwrap();
        for (p, id) in ["a", "b", "c", "d"].iter().enumerate() {
            register(&mut agg, p as u32, id);
        }
        for (p, id) in ["a", "b", "c"].iter().enumerate() {
            submit(&mut agg, p as u32, id, 0, &[1.0]);
        }
        let before = agg.global_weights().clone();
        let out = decoded(&agg.on_timeout());
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|(_, m)| matches!(m, Message::Error { code: ErrorCode::RoundAborted, .. })));
        assert!(agg.is_aborted());
        assert!(agg.global_weights().bitwise_eq(&before));
        let reason = agg.report().abort_reason.unwrap();
        assert!(reason.contains("3 of 4") && reason.contains("\"d\""), "{reason}");
        assert!(agg.records().last().unwrap().aborted);
    }

    #[test]
    fn late_client_joins_next_round() {
        let mut agg = Aggregator::new(AggregatorConfig { expected_clients: 1, rounds: 3 }, toy(&[0.0])).unwrap();
        register(&mut agg, 0, "a");
        let out = decoded(&register(&mut agg, 1, "late"));
        assert!(matches!(out[0], (1, Message::GlobalModel { round: 0, .. })));
        // its warm-up delta is acknowledged but ignored
        assert_eq!(decoded(&submit(&mut agg, 1, "late", 0, &[100.0]))[0].1, Message::Ack);
        let out = decoded(&submit(&mut agg, 0, "a", 0, &[1.0]));
        assert_eq!(agg.global_weights().params().get("w").unwrap().data(), &[1.0]);
        let targets: Vec<u32> = out.iter().filter(|(_, m)| matches!(m, Message::GlobalModel { round: 1, .. })).map(|(p, _)| *p).collect();
        assert_eq!(targets, vec![0, 1]);
        submit(&mut agg, 0, "a", 1, &[3.0]);
        assert_eq!(agg.round(), 1);
        submit(&mut agg, 1, "late", 1, &[5.0]);
        assert_eq!(agg.round(), 2);
        assert_eq!(agg.global_weights().params().get("w").unwrap().data(), &[4.0]);
    }

    #[test]
    fn wrong_round_and_layout_rejected() {
        let mut agg = Aggregator::new(AggregatorConfig { expected_clients: 1, rounds: 2 }, toy(&[0.0])).unwrap();
        register(&mut agg, 0, "a");
        let out = decoded(&submit(&mut agg, 0, "a", 1, &[1.0]));
        assert!(matches!(out[0].1, Message::Error { code: ErrorCode::UnexpectedMessage, .. }));
        let delta = compute_delta(&toy(&[1.0, 2.0]), &toy(&[0.0, 0.0]), 0).unwrap();
        let out = decoded(&agg.handle_frame(
            0,
            &encode_message(&Message::DeltaSubmission { client_id: "a".into(), round: 0, delta, windows_trained: 1 }),
        ));
        assert!(matches!(out[0].1, Message::Error { code: ErrorCode::LayoutMismatch, .. }));
        assert_eq!(agg.round(), 0);
        let out = decoded(&agg.handle_frame(0, &[1, 2, 3]));
        assert!(matches!(out[0].1, Message::Error { .. }));
    }

    #[test]
    fn per_round_traffic_is_constant() {
        let mut agg = Aggregator::new(AggregatorConfig { expected_clients: 2, rounds: 4 }, toy(&[0.0, 1.0])).unwrap();
        register(&mut agg, 0, "a");
        register(&mut agg, 1, "b");
        for r in 0..4u64 {
            submit(&mut agg, 0, "a", r, &[r as f32, 0.5]);
            submit(&mut agg, 1, "b", r, &[1.0, -(r as f32)]);
        }
        let rep = agg.report();
        assert_eq!(rep.rounds.len(), 4);
        assert!(rep.rounds.windows(2).all(|w| w[0].bytes_sent == w[1].bytes_sent && w[0].bytes_received == w[1].bytes_received));
        assert!(rep.setup_bytes_sent > 0 && rep.setup_bytes_received > 0);
    }
}
