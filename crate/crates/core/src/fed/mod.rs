//! Federated protocol: weight exchange, averaging, wire codec, the
//! aggregation and training node state machines, and transports.
//!
//! Both node roles are written as state machines that consume and produce
//! encoded frames, so the same logic runs over the in-process simulator and
//! over TCP, and byte accounting always reflects the exact wire size.

mod aggregator;
mod codec;
mod node;
mod sim;
mod transport;
mod weights;

pub use aggregator::{
    aggregation_node_run, aggregation_round, AggregationReport, Aggregator, AggregatorConfig,
    Outgoing, RoundRecord, RoundState, RoundStatus,
};
pub use codec::{
    decode_message, delta_payload_len, deserialize_delta, deserialize_weights, encode_message,
    message_kind_names, read_frame, serialize_delta, serialize_weights, weights_payload_len,
    CodecError, ErrorCode, Message, FRAME_HEADER_LEN, FRAME_MAGIC, WEIGHTS_MAGIC, WIRE_VERSION,
};
pub use node::{
    training_node_run, NodeConfig, NodeData, NodeOutput, NodeRoundLog, TrainingNode,
    WindowSchedule,
};
pub use sim::{simulate_federation, SimulationOutcome};
pub use transport::{
    connect_with_retry, in_proc_pair, InProcTransport, RetryPolicy, TcpTransport, Transport,
};
pub use weights::{apply_delta, compute_delta, fedavg, ModelWeights, WeightDelta};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum FedError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("weight layout mismatch: {0}")]
    Layout(String),
    #[error("protocol state error: {0}")]
    State(String),
    #[error("round aborted: {0}")]
    Aborted(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("peer reported error {code:?}: {text}")]
    Remote { code: ErrorCode, text: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<std::io::Error> for FedError {
    fn from(e: std::io::Error) -> Self {
        FedError::Transport(e.to_string())
    }
}
