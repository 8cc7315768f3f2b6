//! Federated condition monitoring for rotating machinery.
//!
//! Training nodes fit an LSTM autoencoder to locally observed vibration
//! batches, an aggregation node merges their weight deltas with federated
//! averaging, and batches are flagged as anomalous when their reconstruction
//! error exceeds a threshold calibrated on healthy data.

pub mod nn;
pub mod fed;
pub mod harness;
pub mod model;
pub mod signal;
