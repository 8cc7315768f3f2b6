use std::net::TcpListener;
use std::time::Duration;

use fedvib::fed::{
    aggregation_node_run, connect_with_retry, decode_message, message_kind_names,
    simulate_federation, training_node_run, Aggregator, AggregatorConfig, Message, ModelWeights,
    NodeConfig, NodeData, RetryPolicy, TrainingNode,
};
use fedvib::model::{build_autoencoder, AutoencoderConfig, Trainer};
use fedvib::nn::TrainConfig;
use fedvib::signal::{make_windows, synth_generate, SynthConfig, Window};

fn model_config() -> AutoencoderConfig {
    AutoencoderConfig {
        window_size: 20,
        feature_count: 1,
        outer_layer_sizes: vec![4],
        encoding_size: 2,
    }
}

fn train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

fn windows(seed: u64, n_batches: usize) -> NodeData {
    let ds = synth_generate(&SynthConfig {
        n_batches,
        batch_len: 100,
        n_features: 1,
        anomaly_indices: vec![],
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let all: Vec<Vec<Window>> = ds
        .batches()
        .iter()
        .enumerate()
        .map(|(i, b)| make_windows(b, i, 20).unwrap())
        .collect();
    let split = n_batches - 2;
    NodeData {
        train: all[..split].iter().flatten().cloned().collect(),
        val: all[split..].iter().flatten().cloned().collect(),
        calibration: all[split..].to_vec(),
    }
}

fn node(id: &str, seed: u64, rounds: u64, data: NodeData, persist: bool) -> TrainingNode {
    let config = NodeConfig {
        train: train_config(),
        rounds,
        seed,
        persist_optimizer: persist,
        ..NodeConfig::new(id, model_config())
    };
    TrainingNode::new(config, data).unwrap()
}

fn initial() -> ModelWeights {
    ModelWeights::from_model(&build_autoencoder(&model_config(), 99).unwrap())
}

/// Local training from the same start, epoch by epoch.
fn local(data: &NodeData, seed: u64, epochs: usize, reset_each_epoch: bool) -> ModelWeights {
    let mut model = build_autoencoder(&model_config(), 99).unwrap();
    let mut trainer = Trainer::new(train_config(), seed).unwrap();
    for e in 0..epochs {
        if reset_each_epoch {
            trainer.reset_optimizer();
        }
        trainer.set_epochs_done(e as u64);
        trainer.train(&mut model, &data.train, &data.val, 1).unwrap();
    }
    ModelWeights::from_model(&model)
}

#[test]
fn single_client_matches_local_training_with_persistent_optimizer() {
    let data = windows(5, 8);
    let out = simulate_federation(initial(), vec![node("solo", 17, 5, data.clone(), true)], 5).unwrap();
    let expected = local(&data, 17, 5, false);
    assert!(out.report.final_weights.bitwise_eq(&expected));
}

#[test]
fn single_client_matches_local_training_with_reset_optimizer() {
    let data = windows(6, 8);
    let out = simulate_federation(initial(), vec![node("solo", 3, 4, data.clone(), false)], 4).unwrap();
    let expected = local(&data, 3, 4, true);
    assert!(out.report.final_weights.bitwise_eq(&expected));
    assert!(!out.report.final_weights.bitwise_eq(&local(&data, 3, 4, false)));
}

#[test]
fn twenty_five_rounds_send_twenty_five_deltas() {
    let nodes = vec![
        node("a", 1, 25, windows(1, 4), false),
        node("b", 2, 25, windows(2, 4), false),
    ];
    let out = simulate_federation(initial(), nodes, 25).unwrap();
    assert_eq!(out.report.rounds.len(), 25);
    for r in &out.report.rounds {
        assert_eq!(r.participants.len(), 2);
        assert!(!r.aborted);
    }
    for n in &out.nodes {
        assert_eq!(n.logs().len(), 25);
        // everyone ends on the same distributed model
        assert!(ModelWeights::from_model(n.model()).bitwise_eq(&out.report.final_weights));
    }
    assert_eq!(out.report.total_bytes(), out.wire_bytes);
}

#[test]
fn round_traffic_does_not_depend_on_dataset_size() {
    let small = simulate_federation(initial(), vec![node("a", 1, 3, windows(1, 4), false), node("b", 2, 3, windows(2, 4), false)], 3).unwrap();
    let large = simulate_federation(initial(), vec![node("a", 1, 3, windows(1, 30), false), node("b", 2, 3, windows(2, 12), false)], 3).unwrap();
    let bytes = |o: &fedvib::fed::SimulationOutcome| -> Vec<(u64, u64)> {
        o.report.rounds.iter().map(|r| (r.bytes_sent, r.bytes_received)).collect()
    };
    assert_eq!(bytes(&small), bytes(&large));
    assert!(bytes(&small).windows(2).all(|w| w[0] == w[1]));
    assert_eq!(small.wire_bytes, large.wire_bytes);
}

#[test]
fn wire_schema_carries_no_samples() {
    // scalars and ids only, plus model tensors in the two weight-bearing fields
    let scalar = ["str16", "u64", "u16", "str32"];
    for (_, kind, fields) in message_kind_names() {
        for (name, ty) in fields.iter() {
            match *ty {
                t if scalar.contains(&t) => {}
                "weights_f32" => assert_eq!((*kind, *name), ("GlobalModel", "weights")),
                "weights_f64" => assert_eq!((*kind, *name), ("DeltaSubmission", "delta")),
                other => panic!("{kind}.{name} has unexpected type {other}"),
            }
        }
    }
}

#[test]
fn tcp_federation_end_to_end() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let agg = Aggregator::new(
        AggregatorConfig {
            expected_clients: 2,
            rounds: 3,
        },
        initial(),
    )
    .unwrap();
    let server = std::thread::spawn(move || aggregation_node_run(listener, agg, Duration::from_secs(30)));
    let clients: Vec<_> = [("a", 1u64), ("b", 2)]
        .into_iter()
        .map(|(id, seed)| {
            std::thread::spawn(move || {
                let mut n = node(id, seed, 3, windows(seed, 4), false);
                let mut t = connect_with_retry(addr, RetryPolicy::default()).unwrap();
                training_node_run(&mut t, &mut n, Duration::from_secs(30)).unwrap();
                n
            })
        })
        .collect();
    let nodes: Vec<TrainingNode> = clients.into_iter().map(|h| h.join().unwrap()).collect();
    let report = server.join().unwrap().unwrap();
    assert_eq!(report.rounds.len(), 3);

    // same federation on the in-process simulator gives the same model
    let sim = simulate_federation(
        initial(),
        vec![node("a", 1, 3, windows(1, 4), false), node("b", 2, 3, windows(2, 4), false)],
        3,
    )
    .unwrap();
    assert!(report.final_weights.bitwise_eq(&sim.report.final_weights));
    assert_eq!(report.total_bytes(), sim.wire_bytes);
    for n in &nodes {
        assert!(n.is_done());
        assert!(ModelWeights::from_model(n.model()).bitwise_eq(&report.final_weights));
    }
}

#[test]
fn delta_frames_hold_only_weights() {
    let mut n = node("a", 1, 1, windows(1, 4), false);
    let gm = fedvib::fed::encode_message(&Message::GlobalModel {
        round: 0,
        weights: initial(),
    });
    let out = n.handle_frame(&gm).unwrap();
    assert_eq!(out.send.len(), 1);
    match decode_message(&out.send[0]).unwrap() {
        Message::DeltaSubmission { client_id, round, delta, windows_trained } => {
            assert_eq!((client_id.as_str(), round, windows_trained), ("a", 0, 10));
            let w = initial();
            assert!(delta.params.names().eq(w.params().names()));
        }
        other => panic!("unexpected {other:?}"),
    }
}
