//! Mini-batch training loop.
//!
//! The learning rate follows the global epoch index kept by the [`Trainer`],
//! and the shuffle order of each epoch depends only on the seed and that
//! index, so splitting a run into several calls (as federated rounds do)
//! reproduces an uninterrupted run exactly when the optimizer state persists.

use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{window_errors, windows_to_batch, AutoencoderModel, ModelError};
use crate::nn::{clip_gradients, AdamState, Scalar, TrainConfig};
use crate::signal::Window;

/// Seed of the shuffle RNG for one global epoch.
pub fn shuffle_seed(seed: u64, epoch_index: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ epoch_index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch_index: u64,
    pub learning_rate: f64,
    /// Mean reconstruction loss over the epoch's mini-batches, before each update.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub windows_trained: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLosses>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochLosses> {
        self.epochs.last()
    }
}

#[derive(Clone, Debug)]
pub struct Trainer<F = f32> {
    config: TrainConfig,
    adam: AdamState<F>,
    seed: u64,
    epochs_done: u64,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            adam: AdamState::new(config.adam),
            config,
            seed,
            epochs_done: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Global epoch index of the next epoch.
    pub fn epochs_done(&self) -> u64 {
        self.epochs_done
    }

    pub fn set_epochs_done(&mut self, epochs: u64) {
        self.epochs_done = epochs;
    }

    pub fn optimizer(&self) -> &AdamState<F> {
        &self.adam
    }

    /// Drops the Adam moments and step count.
    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::new(self.config.adam);
    }

    pub fn train(
        &mut self,
        model: &mut AutoencoderModel<F>,
        train: &[Window],
        val: &[Window],
        n_epochs: usize,
    ) -> Result<TrainHistory, ModelError> {
        if train.is_empty() {
            return Err(ModelError::Invalid("empty training set".into()));
        }
        let mut history = TrainHistory::default();
        if n_epochs == 0 {
            return Ok(history);
        }
        let refs: Vec<&Window> = train.iter().collect();
        let data = windows_to_batch::<F>(&refs)?;
        for _ in 0..n_epochs {
            let mut losses = self.epoch(model, &data)?;
            if !val.is_empty() {
                let errs = window_errors(model, val)?;
                losses.val_loss = Some(errs.iter().sum::<f64>() / errs.len() as f64);
            }
            history.epochs.push(losses);
        }
        Ok(history)
    }

    fn epoch(&mut self, model: &mut AutoencoderModel<F>, data: &Array3<F>) -> Result<EpochLosses, ModelError> {
        let epoch_index = self.epochs_done;
        let lr = self.config.lr_at(epoch_index);
        let n = data.shape()[1];
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed(self.seed, epoch_index)));

        let mut weighted = 0.0;
        for idx in order.chunks(self.config.batch_size) {
            let batch = data.select(Axis(1), idx);
            let (loss, mut grads) = model.loss_and_grads(batch.view(), self.config.l2_lambda)?;
            let loss = loss.as_f64();
            if !loss.is_finite() || !grads.is_finite() {
                return Err(ModelError::Diverged {
                    epoch: epoch_index,
                    loss,
                });
            }
            weighted += loss * idx.len() as f64;
            clip_gradients(&mut grads, self.config.clip_max_norm);
            self.adam.step(model.params_mut(), &grads, lr)?;
        }
        self.epochs_done += 1;
        Ok(EpochLosses {
            epoch_index,
            learning_rate: lr,
            train_loss: weighted / n as f64,
            val_loss: None,
            windows_trained: n,
        })
    }
}

/// Trains `model` for `n_epochs` from epoch index 0 with a fresh optimizer.
pub fn train_epochs<F: Scalar>(
    model: &mut AutoencoderModel<F>,
    train: &[Window],
    val: &[Window],
    config: &TrainConfig,
    n_epochs: usize,
    seed: u64,
) -> Result<TrainHistory, ModelError> {
    Trainer::new(config.clone(), seed)?.train(model, train, val, n_epochs)
}
