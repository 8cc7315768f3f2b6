use serde::{Deserialize, Serialize};

use super::{shape_err, NnError, ParamSet, Scalar, Tensor};

/// Optimizer and schedule settings for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Fractional learning-rate reduction applied after every epoch.
    pub lr_decay_per_epoch: f64,
    /// Weight of the `Σ w²` penalty on weight matrices (biases excluded).
    pub l2_lambda: f64,
    pub clip_max_norm: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_decay_per_epoch: 0.01,
            l2_lambda: 1e-7,
            clip_max_norm: 1.0,
            batch_size: 64,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.lr_decay_per_epoch) {
            return bad("lr_decay_per_epoch must lie in [0, 1)");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be non-negative");
        }
        if !(self.clip_max_norm > 0.0) {
            return bad("clip_max_norm must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        self.adam.validate()
    }

    /// Learning rate in effect during epoch `epoch_index` (zero-based).
    pub fn lr_at(&self, epoch_index: u64) -> f64 {
        decayed_lr(self.learning_rate, self.lr_decay_per_epoch, epoch_index)
    }
}

/// `lr0 · (1 − decay)^epoch_index`
pub fn decayed_lr(lr0: f64, decay: f64, epoch_index: u64) -> f64 {
    lr0 * (1.0 - decay).powi(epoch_index.min(i32::MAX as u64) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<(), NnError> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NnError::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(NnError::Config("adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// Adam moment estimates. Moments are allocated on the first step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F = f32> {
    pub config: AdamConfig,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    step_count: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moments(&self) -> &[Tensor<F>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<F>] {
        &self.v
    }

    /// Applies one bias-corrected Adam update to `params` in place.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor<F>>,
        grads: &ParamSet<F>,
        lr: f64,
    ) -> Result<(), NnError>
    where
        F: 'a,
    {
        let mut params: Vec<&mut Tensor<F>> = params.into_iter().collect();
        if params.len() != grads.len() {
            return shape_err(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            ));
        }
        for (p, (name, g)) in params.iter().zip(grads.iter()) {
            if p.shape() != g.shape() {
                return shape_err(format!(
                    "gradient {name} shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                ));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(&params).any(|(m, p)| m.shape() != p.shape())
        {
            return shape_err("adam moments do not mirror the parameter set");
        }

        self.step_count += 1;
        let t = self.step_count.min(i32::MAX as u64) as i32;
        let b1 = F::lit(self.config.beta1);
        let b2 = F::lit(self.config.beta2);
        let one = F::one();
        let bc1 = F::lit(1.0 - self.config.beta1.powi(t));
        let bc2 = F::lit(1.0 - self.config.beta2.powi(t));
        let eps = F::lit(self.config.eps);
        let lr = F::lit(lr);

        for (i, (_, g)) in grads.iter().enumerate() {
            let w = params[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                m[k] = b1 * m[k] + (one - b1) * gk;
                v[k] = b2 * v[k] + (one - b2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                w[k] = w[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
///
/// Returns the norm before clipping.
pub fn clip_gradients<F: Scalar>(grads: &mut ParamSet<F>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(F::lit(max_norm / norm));
        // rounding in low precision can leave the norm a hair above the limit
        let shrink = F::one() - F::epsilon();
        while grads.global_norm() > max_norm {
            grads.scale(shrink);
        }
    }
    norm
}

/// `λ · Σ w²` over the given weight tensors.
pub fn l2_penalty<'a, F: Scalar + 'a>(
    weights: impl IntoIterator<Item = &'a Tensor<F>>,
    lambda: f64,
) -> f64 {
    lambda * weights.into_iter().map(Tensor::sum_squares).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_vec(vec![v]));
        p
    }

    /// Independent scalar Adam used as the reference trace.
    fn scalar_adam(w0: f64, grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut m, mut v, mut w) = (0.0, 0.0, w0);
        let mut trace = Vec::new();
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
            trace.push(w);
        }
        trace
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut w = Tensor::<f32>::from_vec(vec![0.5, -0.25]);
        let mut g = ParamSet::new();
        g.push("w", Tensor::zeros(&[2]));
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step([&mut w], &g, 0.1).unwrap();
        assert_eq!(w.data(), &[0.5, -0.25]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = Tensor::<f64>::from_vec(vec![0.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step([&mut w], &single(1.0), 0.1).unwrap();
        assert!((w.data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let mut w = Tensor::<f64>::from_vec(vec![0.3]);
        let mut adam = AdamState::new(AdamConfig::default());
        let reference = scalar_adam(0.3, &[0.7, 0.7], 0.05);
        adam.step([&mut w], &single(0.7), 0.05).unwrap();
        assert_eq!(w.data()[0], reference[0]);
        adam.step([&mut w], &single(0.7), 0.05).unwrap();
        assert_eq!(w.data()[0], reference[1]);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn mismatched_gradient_shape() {
        let mut w = Tensor::<f32>::from_vec(vec![0.0, 1.0]);
        let mut g = ParamSet::new();
        g.push("w", Tensor::zeros(&[3]));
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(adam.step([&mut w], &g, 0.1).is_err());
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn decay_schedule() {
        assert_eq!(decayed_lr(0.001, 0.01, 0), 0.001);
        assert!((decayed_lr(0.001, 0.01, 1) - 0.00099).abs() < 1e-15);
        assert!((decayed_lr(0.001, 0.01, 100) - 3.660_323_412_732_292e-4).abs() < 1e-12);
    }

    #[test]
    fn clip_below_threshold_is_noop() {
        let mut g = single(0.5);
        clip_gradients(&mut g, 1.0);
        assert_eq!(g.get("w").unwrap().data(), &[0.5]);
    }

    #[test]
    fn clip_halves_norm_two() {
        let mut g = ParamSet::<f64>::new();
        g.push("a", Tensor::from_vec(vec![1.2, -1.6]));
        assert_eq!(clip_gradients(&mut g, 1.0), 2.0);
        assert_eq!(g.get("a").unwrap().data(), &[0.6, -0.8]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            lr_decay_per_epoch: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn clipped_norm_is_min_of_norm_and_limit(
            a in proptest::collection::vec(-10.0f32..10.0, 1..40),
            b in proptest::collection::vec(-10.0f32..10.0, 1..40),
            max_norm in 0.01f64..20.0,
        ) {
            let mut g = ParamSet::<f32>::new();
            g.push("a", Tensor::from_vec(a));
            g.push("b", Tensor::from_vec(b));
            let before = clip_gradients(&mut g, max_norm);
            let after = g.global_norm();
            prop_assert!(after <= max_norm + 1e-6);
            prop_assert!((after - before.min(max_norm)).abs() <= 1e-5 * before.max(1.0));
        }
    }
}
