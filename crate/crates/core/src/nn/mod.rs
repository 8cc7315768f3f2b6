//! Minimal neural-network core.
//!
//! Dense tensors, LSTM and dense layers with hand-written reverse-mode
//! gradients, ReLU, mean squared error, Adam with global-norm gradient
//! clipping, an exponential learning-rate schedule and L2 regularization
//! of weight matrices.
//!
//! Everything is generic over [`Scalar`] so the same code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.

mod activation;
mod dense;
mod init;
mod loss;
mod lstm;
mod optim;
mod tensor;

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

pub use activation::{relu, relu_backward, relu_inplace, sigmoid};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseParams};
pub use init::glorot_uniform;
pub use loss::{mse_loss, mse_loss_grad};
pub use lstm::{
    lstm_backward, lstm_forward, lstm_forward_batch, LstmCache, LstmGrads, LstmParams,
    GATE_COUNT,
};
pub use optim::{
    clip_gradients, decayed_lr, l2_penalty, AdamConfig, AdamState, TrainConfig,
};
pub use tensor::{ParamSet, Tensor};

/// Floating-point element type usable by the layers.
pub trait Scalar:
    LinalgScalar
    + Float
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T, NnError> {
    Err(NnError::Shape(msg.into()))
}
