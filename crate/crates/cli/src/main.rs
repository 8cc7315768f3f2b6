use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedvib::fed::{
    aggregation_node_run, connect_with_retry, training_node_run, Aggregator, AggregatorConfig,
    ErrorCode, FedError, ModelWeights, RetryPolicy, TrainingNode, WindowSchedule,
};
use fedvib::harness::{
    evaluate_nodes, export_results, load_source, node_config, prepare_node, run_experiment,
    sweep_hyperparameters, verify_ims_dir, DataSource, ExperimentConfig, HarnessError, NodeSpec,
    Scenario, SearchSpace, SweepScale,
};
use fedvib::model::build_autoencoder;
use fedvib::signal::{synth_generate, write_csv_dataset};

#[derive(Parser)]
#[command(name = "fedvib", version, about = "Federated LSTM-autoencoder condition monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the aggregation node over TCP.
    Aggregate {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        clients: usize,
        #[arg(long, default_value_t = 25)]
        rounds: u64,
        /// Experiment file supplying the model and seed; the synthetic preset otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Abort a round after this many seconds without progress.
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
    /// Run one training node against a remote aggregator.
    Train {
        #[arg(long)]
        aggregator: String,
        /// Dataset manifest (or a directory containing manifest.csv).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        id: String,
        /// Must match the aggregator's round count.
        #[arg(long, default_value_t = 25)]
        rounds: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train on a growing window prefix (cold start).
        #[arg(long)]
        cold_start: bool,
        #[arg(long, default_value_t = 3600)]
        timeout_secs: u64,
    },
    /// Run a complete experiment from a TOML file and export CSV results.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `results/<scenario>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank hyperparameter combinations by validation loss.
    Sweep {
        #[arg(long)]
        budget: usize,
        /// Experiment file whose node data is used; synthetic data otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        max_windows: usize,
        /// Write the ranking as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic node datasets and a matching experiment file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        nodes: usize,
    },
    /// Check that an IMS test set is present and complete.
    FetchIms {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        set: u8,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::synthetic(1, 0)),
    }
}

fn aggregate(listen: &str, clients: usize, rounds: u64, config: Option<&Path>, timeout: Duration) -> Result<()> {
    let cfg = load_config(config)?;
    let initial = ModelWeights::from_model(&build_autoencoder(&cfg.model, cfg.seed)?);
    let agg = Aggregator::new(
        AggregatorConfig {
            expected_clients: clients,
            rounds,
        },
        initial,
    )?;
    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    log::info!("aggregator listening on {}", listener.local_addr()?);
    let report = aggregation_node_run(listener, agg, timeout)?;
    for r in &report.rounds {
        println!(
            "round {:>3}  clients {}  sent {} B  received {} B  {:.2}s",
            r.round,
            r.participants.len(),
            r.bytes_sent,
            r.bytes_received,
            r.duration.as_secs_f64()
        );
    }
    println!(
        "total {} B ({} B setup), final model {}",
        report.total_bytes(),
        report.setup_bytes_sent + report.setup_bytes_received,
        report.final_weights.fingerprint_hex()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    addr: &str,
    data: &Path,
    id: &str,
    rounds: u64,
    config: Option<&Path>,
    cold_start: bool,
    timeout: Duration,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.rounds = rounds;
    let manifest = if data.is_dir() { data.join("manifest.csv") } else { data.to_path_buf() };
    let loaded = load_source(&DataSource::Csv { manifest }, &cfg)?;
    let prepared = prepare_node(id, loaded, &cfg)?;
    let index = cfg.nodes.iter().position(|n| n.id == id).unwrap_or(0);
    let schedule = if cold_start {
        WindowSchedule::Growing {
            step: cfg.cold_start_step,
        }
    } else {
        WindowSchedule::All
    };
    let mut node = TrainingNode::new(node_config(&cfg, id, index, schedule), prepared.node_data())?;
    let mut transport = connect_with_retry(addr, RetryPolicy::default())?;
    training_node_run(&mut transport, &mut node, timeout)?;
    for l in node.logs() {
        println!(
            "round {:>3}  windows {}  loss {:.6}  val {}  threshold {}  sent {} B  received {} B",
            l.round,
            l.windows_trained,
            l.train_loss,
            l.val_loss.map_or("-".into(), |v| format!("{v:.6}")),
            l.threshold.map_or("-".into(), |v| format!("{v:.6}")),
            l.bytes_sent,
            l.bytes_received
        );
    }
    let detection = evaluate_nodes(node.model(), std::slice::from_ref(&prepared), &cfg, |_| Vec::new())?;
    let d = &detection[0];
    let flagged = d.above_threshold().count();
    println!("{id}: threshold {:.6}, {flagged} of {} batches above", d.threshold, d.scores.len());
    if let Some(m) = &d.metrics {
        println!("{id}: precision {:.3} recall {:.3} f1 {:.3}", m.precision, m.recall, m.f1);
    }
    Ok(())
}

fn experiment(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let report = run_experiment(&cfg)?;
    let out = out.unwrap_or_else(|| PathBuf::from("results").join(cfg.scenario.as_str()));
    export_results(&report, &out)?;
    if report.untrained {
        println!("note: rounds = 0, scores come from the untrained model");
    }
    for d in &report.detection {
        let m = d.metrics.as_ref().map_or("no labels".to_string(), |m| {
            format!("precision {:.3} recall {:.3} f1 {:.3}", m.precision, m.recall, m.f1)
        });
        println!(
            "{:<12} threshold {:.6}  above {:>4}/{:<4} {m}",
            d.node,
            d.threshold,
            d.above_threshold().count(),
            d.scores.len()
        );
    }
    let n = &report.network;
    if cfg.scenario != Scenario::Centralized {
        println!(
            "network: federated {} B vs raw {} B ({:.2}% less); rounds constant: {}",
            n.federated_bytes,
            n.raw_bytes,
            n.reduction().unwrap_or(f64::NAN),
            n.rounds_constant()
        );
    } else {
        println!("network: pooling the raw data moves {} B", n.raw_bytes);
    }
    println!("results written to {}", out.display());
    Ok(())
}

fn sweep(budget: usize, config: Option<&Path>, scale: SweepScale, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let datasets = cfg
        .nodes
        .iter()
        .map(|n| Ok(load_source(&n.source, &cfg)?.dataset))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let ranked = sweep_hyperparameters(&SearchSpace::default(), budget, &datasets, &scale)?;
    let mut w = match out {
        Some(p) => Some(csv::Writer::from_path(p).with_context(|| format!("creating {}", p.display()))?),
        None => None,
    };
    if let Some(w) = &mut w {
        w.write_record([
            "rank", "val_loss", "params", "batch_size", "window_size", "outer_size", "layers",
            "encoding_size", "learning_rate",
        ])?;
    }
    for (rank, r) in ranked.iter().enumerate() {
        let p = &r.point;
        println!(
            "{:>4}  val {:.6}  params {:>8}  batch {:>3} window {:>3} outer {:>3}x{} code {:>2} lr {}",
            rank + 1,
            r.val_loss,
            r.param_count,
            p.batch_size,
            p.window_size,
            p.outer_size,
            p.layers,
            p.encoding_size,
            p.learning_rate
        );
        if let Some(w) = &mut w {
            w.write_record([
                (rank + 1).to_string(),
                r.val_loss.to_string(),
                r.param_count.to_string(),
                p.batch_size.to_string(),
                p.window_size.to_string(),
                p.outer_size.to_string(),
                p.layers.to_string(),
                p.encoding_size.to_string(),
                p.learning_rate.to_string(),
            ])?;
        }
    }
    if let Some(mut w) = w {
        w.flush()?;
    }
    Ok(())
}

fn synth(out: &Path, seed: u64, nodes: usize) -> Result<()> {
    if nodes == 0 {
        bail!("--nodes must be at least 1");
    }
    let mut cfg = ExperimentConfig::synthetic(nodes, seed);
    let mut csv_nodes = Vec::with_capacity(nodes);
    for spec in &cfg.nodes {
        let DataSource::Synth(s) = &spec.source else {
            unreachable!("synthetic preset")
        };
        let manifest = write_csv_dataset(&synth_generate(s)?, &out.join(&spec.id))?;
        println!("{}: {}", spec.id, manifest.display());
        csv_nodes.push(NodeSpec {
            id: spec.id.clone(),
            source: DataSource::Csv {
                manifest: PathBuf::from(&spec.id).join("manifest.csv"),
            },
        });
    }
    cfg.nodes = csv_nodes;
    let path = out.join("experiment.toml");
    std::fs::write(&path, cfg.to_toml_string()?).with_context(|| format!("writing {}", path.display()))?;
    println!("experiment file: {} (paths relative to {})", path.display(), out.display());
    Ok(())
}

fn fetch_ims(set: u8, out: &Path) -> Result<()> {
    let n = verify_ims_dir(out, Some(set))?;
    println!("IMS test set {set}: {n} measurement files in {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Aggregate {
            listen,
            clients,
            rounds,
            config,
            timeout_secs,
        } => aggregate(&listen, clients, rounds, config.as_deref(), Duration::from_secs(timeout_secs)),
        Command::Train {
            aggregator,
            data,
            id,
            rounds,
            config,
            cold_start,
            timeout_secs,
        } => train(
            &aggregator,
            &data,
            &id,
            rounds,
            config.as_deref(),
            cold_start,
            Duration::from_secs(timeout_secs),
        ),
        Command::Experiment { config, out } => experiment(&config, out),
        Command::Sweep {
            budget,
            config,
            seed,
            epochs,
            max_windows,
            out,
        } => sweep(
            budget,
            config.as_deref(),
            SweepScale {
                epochs,
                max_train_windows: max_windows,
                max_val_windows: max_windows / 4 + 1,
                seed,
                ..SweepScale::default()
            },
            out.as_deref(),
        ),
        Command::Synth { out, seed, nodes } => synth(&out, seed, nodes),
        Command::FetchIms { set, out } => fetch_ims(set, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let aborted = e.chain().any(|c| {
                let fed = c
                    .downcast_ref::<FedError>()
                    .or_else(|| match c.downcast_ref::<HarnessError>() {
                        Some(HarnessError::Fed(f)) => Some(f),
                        _ => None,
                    });
                matches!(
                    fed,
                    Some(FedError::Aborted(_))
                        | Some(FedError::Remote {
                            code: ErrorCode::RoundAborted,
                            ..
                        })
                )
            });
            // distinguishes an aborted federation round from other failures
            ExitCode::from(if aborted { 3 } else { 1 })
        }
    }
}
