//! Grid search over architecture and optimizer settings at reduced scale.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::batch_windows;
use super::HarnessError;
use crate::model::{build_autoencoder, train_epochs, AutoencoderConfig, ModelError};
use crate::nn::TrainConfig;
use crate::signal::{chronological_split, Dataset, SplitSpec, Window};

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub batch_sizes: Vec<usize>,
    pub window_sizes: Vec<usize>,
    pub outer_layer_sizes: Vec<usize>,
    /// Number of outer LSTM layers per side, all of the same width.
    pub layer_counts: Vec<usize>,
    pub encoding_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            batch_sizes: vec![32, 64, 128],
            window_sizes: vec![50, 100, 200],
            outer_layer_sizes: vec![32, 64, 128, 256, 512],
            layer_counts: vec![1, 2, 3, 4],
            encoding_sizes: vec![8, 16, 32],
            learning_rates: vec![3e-2, 3e-4, 1e-2, 1e-3],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub batch_size: usize,
    pub window_size: usize,
    pub outer_size: usize,
    pub layers: usize,
    pub encoding_size: usize,
    pub learning_rate: f64,
}

impl SweepPoint {
    pub fn model(&self, feature_count: usize) -> AutoencoderConfig {
        AutoencoderConfig {
            window_size: self.window_size,
            feature_count,
            outer_layer_sizes: vec![self.outer_size; self.layers],
            encoding_size: self.encoding_size,
        }
    }

    pub fn train(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            ..base.clone()
        }
    }
}

impl SearchSpace {
    pub fn len(&self) -> usize {
        self.batch_sizes.len()
            * self.window_sizes.len()
            * self.outer_layer_sizes.len()
            * self.layer_counts.len()
            * self.encoding_sizes.len()
            * self.learning_rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination, in lexicographic order of the fields.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &batch_size in &self.batch_sizes {
            for &window_size in &self.window_sizes {
                for &outer_size in &self.outer_layer_sizes {
                    for &layers in &self.layer_counts {
                        for &encoding_size in &self.encoding_sizes {
                            for &learning_rate in &self.learning_rates {
                                out.push(SweepPoint {
                                    batch_size,
                                    window_size,
                                    outer_size,
                                    layers,
                                    encoding_size,
                                    learning_rate,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SweepScale {
    pub epochs: usize,
    /// Training windows per candidate, taken at an even stride.
    pub max_train_windows: usize,
    pub max_val_windows: usize,
    pub split: SplitSpec,
    pub base_train: TrainConfig,
    pub seed: u64,
}

impl Default for SweepScale {
    fn default() -> Self {
        Self {
            epochs: 2,
            max_train_windows: 256,
            max_val_windows: 64,
            split: SplitSpec::default(),
            base_train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// Position of the point in `SearchSpace::points`.
    pub index: usize,
    pub point: SweepPoint,
    pub param_count: usize,
    /// Mean window error on validation windows; infinite if training diverged.
    pub val_loss: f64,
}

fn strided(mut windows: Vec<Window>, max: usize) -> Vec<Window> {
    if windows.len() <= max {
        return windows;
    }
    let n = windows.len();
    let keep: Vec<usize> = (0..max).map(|k| k * n / max).collect();
    let mut i = 0;
    windows.retain(|_| {
        let hit = keep.binary_search(&i).is_ok();
        i += 1;
        hit
    });
    windows
}

fn candidate_windows(
    datasets: &[Dataset],
    window: usize,
    scale: &SweepScale,
) -> Result<(Vec<Window>, Vec<Window>), HarnessError> {
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for d in datasets {
        let split = chronological_split(d.len(), &scale.split)?;
        fit.extend(batch_windows(d, split.fit, window)?.into_iter().flatten());
        val.extend(batch_windows(d, split.validation, window)?.into_iter().flatten());
    }
    if fit.is_empty() || val.is_empty() {
        return Err(HarnessError::Config(format!("no windows of size {window} in the sweep data")));
    }
    Ok((strided(fit, scale.max_train_windows), strided(val, scale.max_val_windows)))
}

fn evaluate(
    index: usize,
    point: &SweepPoint,
    datasets: &[Dataset],
    scale: &SweepScale,
) -> Result<SweepResult, HarnessError> {
    let features = datasets[0].feature_count;
    let config = point.model(features);
    let (fit, val) = candidate_windows(datasets, point.window_size, scale)?;
    let mut model = build_autoencoder(&config, scale.seed)?;
    let val_loss = match train_epochs(&mut model, &fit, &val, &point.train(&scale.base_train), scale.epochs, scale.seed) {
        Ok(h) => h.last().and_then(|e| e.val_loss).unwrap_or(f64::INFINITY),
        Err(ModelError::Diverged { .. }) => f64::INFINITY,
        Err(e) => return Err(e.into()),
    };
    Ok(SweepResult {
        index,
        point: point.clone(),
        param_count: config.param_count(),
        val_loss,
    })
}

/// Trains `budget` points drawn from `space` (all of them if the budget
/// covers the grid) and ranks them by validation loss, then by parameter
/// count. Sampling and training are seeded by `scale.seed`.
pub fn sweep_hyperparameters(
    space: &SearchSpace,
    budget: usize,
    datasets: &[Dataset],
    scale: &SweepScale,
) -> Result<Vec<SweepResult>, HarnessError> {
    if space.is_empty() || budget == 0 {
        return Err(HarnessError::Config("hyperparameter search space is empty".into()));
    }
    if datasets.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one dataset".into()));
    }
    if datasets.iter().any(|d| d.feature_count != datasets[0].feature_count) {
        return Err(HarnessError::Config("sweep datasets differ in feature count".into()));
    }
    let points = space.points();
    let mut order: Vec<usize> = (0..points.len()).collect();
    if budget < points.len() {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(scale.seed));
        order.truncate(budget);
        order.sort_unstable();
    }

    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(order.len()));
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(order.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&index) = order.get(k) else { break };
                let r = evaluate(index, &points[index], datasets, scale);
                log::info!("sweep candidate {index}: {:?}", r.as_ref().map(|r| r.val_loss));
                results.lock().expect("sweep results").push(r);
            });
        }
    });
    let mut ranked = results
        .into_inner()
        .expect("sweep results")
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    ranked.sort_by(|a, b| {
        a.val_loss
            .total_cmp(&b.val_loss)
            .then(a.param_count.cmp(&b.param_count))
            .then(a.index.cmp(&b.index))
    });
    Ok(ranked)
}
