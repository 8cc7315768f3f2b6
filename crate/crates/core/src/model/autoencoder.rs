//! Encoder: stacked outer LSTM layers emitting full sequences, then an
//! encoding LSTM whose final hidden state is the code. Decoder: the code is
//! repeated over every timestep and fed through the outer sizes in reverse,
//! followed by a per-timestep linear dense layer back to the feature count.
//! ReLU sits between consecutive outer layers only.

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::{
    dense_backward, lstm_backward, lstm_forward_batch, mse_loss_grad, relu_backward,
    relu_inplace, DenseParams, LstmCache, LstmParams, NnError, ParamSet, Scalar, Tensor,
};
use crate::signal::Window;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub window_size: usize,
    pub feature_count: usize,
    pub outer_layer_sizes: Vec<usize>,
    pub encoding_size: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            window_size: 100,
            feature_count: 1,
            outer_layer_sizes: vec![128],
            encoding_size: 16,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.window_size < 2 {
            return err(format!("window_size {} must be >= 2", self.window_size));
        }
        if self.feature_count == 0 {
            return err("feature_count must be >= 1".into());
        }
        if self.outer_layer_sizes.is_empty() || self.outer_layer_sizes.contains(&0) {
            return err("need at least one non-empty outer layer".into());
        }
        if self.encoding_size == 0 || self.encoding_size >= self.window_size * self.feature_count {
            return err(format!(
                "encoding_size {} must be in 1..{} to compress a window",
                self.encoding_size,
                self.window_size * self.feature_count
            ));
        }
        Ok(())
    }

    /// Number of trainable scalars; depends only on the configuration.
    pub fn param_count(&self) -> usize {
        let lstm = |i: usize, h: usize| 4 * h * (i + h + 1);
        let mut total = 0;
        let mut input = self.feature_count;
        for &h in &self.outer_layer_sizes {
            total += lstm(input, h);
            input = h;
        }
        total += lstm(input, self.encoding_size);
        input = self.encoding_size;
        for &h in self.outer_layer_sizes.iter().rev() {
            total += lstm(input, h);
            input = h;
        }
        total + input * self.feature_count + self.feature_count
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderModel<F = f32> {
    config: AutoencoderConfig,
    encoder: Vec<LstmParams<F>>,
    encoding: LstmParams<F>,
    decoder: Vec<LstmParams<F>>,
    output: DenseParams<F>,
}

/// Forward intermediates for one batch.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    encoder: Vec<(LstmCache<F>, Array3<F>)>,
    encoding: LstmCache<F>,
    decoder: Vec<(LstmCache<F>, Array3<F>)>,
    dense_input: Array2<F>,
    steps: usize,
    batch: usize,
}

/// Seeded model with the default parameter layout.
pub fn build_autoencoder(config: &AutoencoderConfig, seed: u64) -> Result<AutoencoderModel<f32>, ModelError> {
    AutoencoderModel::build(config, seed)
}

/// Stacks windows into a `[window_size, n_windows, features]` batch.
pub fn windows_to_batch<F: Scalar>(windows: &[&Window]) -> Result<Array3<F>, ModelError> {
    let first = windows
        .first()
        .ok_or_else(|| ModelError::Invalid("no windows to stack".into()))?;
    let (t, f) = (first.values.shape()[0], first.values.shape()[1]);
    let mut out = Array3::<F>::zeros((t, windows.len(), f));
    for (b, w) in windows.iter().enumerate() {
        if w.values.shape() != [t, f] {
            return Err(ModelError::Invalid(format!(
                "window shape {:?} differs from {:?}",
                w.values.shape(),
                [t, f]
            )));
        }
        for (k, row) in w.values.data().chunks(f).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                out[[k, b, j]] = F::lit(v as f64);
            }
        }
    }
    Ok(out)
}

fn is_weight(name: &str) -> bool {
    name.ends_with(".w") || name.ends_with(".u")
}

impl<F: Scalar> AutoencoderModel<F> {
    pub fn build(config: &AutoencoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::new();
        let mut input = config.feature_count;
        for &h in &config.outer_layer_sizes {
            encoder.push(LstmParams::init(&mut rng, input, h));
            input = h;
        }
        let encoding = LstmParams::init(&mut rng, input, config.encoding_size);
        let mut decoder = Vec::new();
        input = config.encoding_size;
        for &h in config.outer_layer_sizes.iter().rev() {
            decoder.push(LstmParams::init(&mut rng, input, h));
            input = h;
        }
        let output = DenseParams::init(&mut rng, input, config.feature_count);
        Ok(Self {
            config: config.clone(),
            encoder,
            encoding,
            decoder,
            output,
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|(_, t)| t.len()).sum()
    }

    /// Named parameters in their fixed layout order.
    pub fn params(&self) -> impl Iterator<Item = (String, &Tensor<F>)> {
        fn lstm<F>(prefix: String, p: &LstmParams<F>) -> [(String, &Tensor<F>); 3] {
            [
                (format!("{prefix}.w"), &p.w),
                (format!("{prefix}.u"), &p.u),
                (format!("{prefix}.b"), &p.b),
            ]
        }
        let mut out = Vec::new();
        for (k, p) in self.encoder.iter().enumerate() {
            out.extend(lstm(format!("enc.l{k}"), p));
        }
        out.extend(lstm("enc.code".into(), &self.encoding));
        for (k, p) in self.decoder.iter().enumerate() {
            out.extend(lstm(format!("dec.l{k}"), p));
        }
        out.push(("dec.out.w".into(), &self.output.w));
        out.push(("dec.out.b".into(), &self.output.b));
        out.into_iter()
    }

    /// Mutable parameters in the same order as [`Self::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        for p in &mut self.encoder {
            out.extend([&mut p.w, &mut p.u, &mut p.b]);
        }
        out.extend([&mut self.encoding.w, &mut self.encoding.u, &mut self.encoding.b]);
        for p in &mut self.decoder {
            out.extend([&mut p.w, &mut p.u, &mut p.b]);
        }
        out.extend([&mut self.output.w, &mut self.output.b]);
        out
    }

    pub fn param_set(&self) -> ParamSet<F> {
        self.params().map(|(n, t)| (n, t.clone())).collect()
    }

    /// Overwrites every parameter; names and shapes must match the layout.
    pub fn load_param_set(&mut self, params: &ParamSet<F>) -> Result<(), ModelError> {
        let expected: Vec<(String, Vec<usize>)> =
            self.params().map(|(n, t)| (n, t.shape().to_vec())).collect();
        if params.len() != expected.len()
            || params
                .iter()
                .zip(&expected)
                .any(|((n, t), (en, es))| n != en || t.shape() != es.as_slice())
        {
            return Err(ModelError::Nn(NnError::Shape(
                "parameter set does not match the model layout".into(),
            )));
        }
        for (dst, (_, src)) in self.params_mut().into_iter().zip(params.iter()) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Weight matrices subject to L2 regularization.
    pub fn regularized(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.params().filter(|(n, _)| is_weight(n)).map(|(_, t)| t)
    }

    /// Batch forward pass over `[T, B, features]`.
    pub fn forward_batch(&self, input: ArrayView3<'_, F>) -> Result<(Array3<F>, ForwardCache<F>), ModelError> {
        let (steps, batch, features) = input.dim();
        if steps != self.config.window_size || features != self.config.feature_count {
            return Err(ModelError::Nn(NnError::Shape(format!(
                "model expects windows of [{}, {}], got [{steps}, {features}]",
                self.config.window_size, self.config.feature_count
            ))));
        }
        let n_outer = self.encoder.len();

        let mut h = input.to_owned();
        let mut enc_caches = Vec::with_capacity(n_outer);
        for (k, layer) in self.encoder.iter().enumerate() {
            let (mut out, cache) = lstm_forward_batch(layer, h.view())?;
            if k + 1 < n_outer {
                relu_inplace(&mut out);
            }
            enc_caches.push((cache, out.clone()));
            h = out;
        }
        let (code_seq, code_cache) = lstm_forward_batch(&self.encoding, h.view())?;
        let code = code_seq.index_axis(Axis(0), steps - 1).to_owned();

        let mut d = code
            .insert_axis(Axis(0))
            .broadcast((steps, batch, self.config.encoding_size))
            .expect("broadcast code over time")
            .to_owned();
        let mut dec_caches = Vec::with_capacity(n_outer);
        for (k, layer) in self.decoder.iter().enumerate() {
            let (mut out, cache) = lstm_forward_batch(layer, d.view())?;
            if k + 1 < n_outer {
                relu_inplace(&mut out);
            }
            dec_caches.push((cache, out.clone()));
            d = out;
        }
        let hidden = d.shape()[2];
        let dense_input = d
            .into_shape_with_order((steps * batch, hidden))
            .map_err(|e| NnError::Shape(e.to_string()))?;
        let y = self.output.forward_rows(dense_input.view())?;
        let y = y
            .to_shape((steps, batch, features))
            .map_err(|e| NnError::Shape(e.to_string()))?
            .into_owned();
        Ok((
            y,
            ForwardCache {
                encoder: enc_caches,
                encoding: code_cache,
                decoder: dec_caches,
                dense_input,
                steps,
                batch,
            },
        ))
    }

    /// Reconstruction of a single window `[window_size, features]`.
    pub fn reconstruct(&self, window: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        let x = window.view2()?.insert_axis(Axis(1));
        let (y, _) = self.forward_batch(x)?;
        Ok(Tensor::from_array(y.remove_axis(Axis(1))))
    }

    /// Gradients of the loss with respect to every parameter given the
    /// gradient `d_output` with respect to the reconstruction.
    pub fn backward(
        &self,
        cache: &ForwardCache<F>,
        d_output: ArrayView3<'_, F>,
        l2_lambda: f64,
    ) -> Result<ParamSet<F>, ModelError> {
        let (steps, batch) = (cache.steps, cache.batch);
        if d_output.dim() != (steps, batch, self.config.feature_count) {
            return Err(ModelError::Nn(NnError::State(
                "output gradient does not match the cached forward pass".into(),
            )));
        }
        let n_outer = self.encoder.len();
        let dy2 = d_output
            .to_shape((steps * batch, self.config.feature_count))
            .map_err(|e| NnError::Shape(e.to_string()))?;
        let (dx, dense_g) = dense_backward(&self.output, cache.dense_input.view(), dy2.view())?;
        let mut grad = dx
            .to_shape((steps, batch, self.output.input_size()))
            .map_err(|e| NnError::Shape(e.to_string()))?
            .into_owned();

        let mut dec_grads = Vec::with_capacity(n_outer);
        for k in (0..n_outer).rev() {
            let (lstm_cache, out) = &cache.decoder[k];
            if k + 1 < n_outer {
                relu_backward(out, &mut grad);
            }
            let (dx, g) = lstm_backward(&self.decoder[k], lstm_cache, grad.view())?;
            dec_grads.push(g);
            grad = dx;
        }
        dec_grads.reverse();

        let d_code = grad.sum_axis(Axis(0));
        let mut d_code_seq = Array3::<F>::zeros((steps, batch, self.config.encoding_size));
        d_code_seq.slice_mut(s![steps - 1, .., ..]).assign(&d_code);
        let (mut grad, code_g) = lstm_backward(&self.encoding, &cache.encoding, d_code_seq.view())?;

        let mut enc_grads = Vec::with_capacity(n_outer);
        for k in (0..n_outer).rev() {
            let (lstm_cache, out) = &cache.encoder[k];
            if k + 1 < n_outer {
                relu_backward(out, &mut grad);
            }
            let (dx, g) = lstm_backward(&self.encoder[k], lstm_cache, grad.view())?;
            enc_grads.push(g);
            grad = dx;
        }
        enc_grads.reverse();

        let mut flat: Vec<Tensor<F>> = Vec::new();
        for g in enc_grads.into_iter().chain([code_g]).chain(dec_grads) {
            flat.push(Tensor::from_array(g.w));
            flat.push(Tensor::from_array(g.u));
            flat.push(Tensor::from_array(g.b));
        }
        flat.push(Tensor::from_array(dense_g.w));
        flat.push(Tensor::from_array(dense_g.b));

        let two_lambda = F::lit(2.0 * l2_lambda);
        let grads: ParamSet<F> = self
            .params()
            .zip(flat)
            .map(|((name, p), mut g)| {
                if l2_lambda != 0.0 && is_weight(&name) {
                    for (gv, &pv) in g.data_mut().iter_mut().zip(p.data()) {
                        *gv += two_lambda * pv;
                    }
                }
                (name, g)
            })
            .collect();
        Ok(grads)
    }

    /// Reconstruction MSE of `batch` against itself and the gradients of
    /// `MSE + λ·Σw²`.
    pub fn loss_and_grads(
        &self,
        batch: ArrayView3<'_, F>,
        l2_lambda: f64,
    ) -> Result<(F, ParamSet<F>), ModelError> {
        let (y, cache) = self.forward_batch(batch)?;
        let (loss, d_out) = mse_loss_grad(batch, y.view())?;
        let grads = self.backward(&cache, d_out.view(), l2_lambda)?;
        Ok((loss, grads))
    }

    /// Full training objective `MSE + λ·Σw²` (for gradient checks).
    pub fn objective(&self, batch: ArrayView3<'_, F>, l2_lambda: f64) -> Result<f64, ModelError> {
        let (y, _) = self.forward_batch(batch)?;
        let (loss, _) = mse_loss_grad(batch, y.view())?;
        Ok(loss.as_f64() + crate::nn::l2_penalty(self.regularized(), l2_lambda))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|(_, t)| t.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> AutoencoderModel<G> {
        let lstm = |p: &LstmParams<F>| LstmParams {
            input_size: p.input_size,
            hidden_size: p.hidden_size,
            w: p.w.cast(),
            u: p.u.cast(),
            b: p.b.cast(),
        };
        AutoencoderModel {
            config: self.config.clone(),
            encoder: self.encoder.iter().map(lstm).collect(),
            encoding: lstm(&self.encoding),
            decoder: self.decoder.iter().map(lstm).collect(),
            output: DenseParams {
                w: self.output.w.cast(),
                b: self.output.b.cast(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_reconstruction_shape() {
        let model = build_autoencoder(&AutoencoderConfig::default(), 0).unwrap();
        let w = Tensor::new(vec![100, 1], (0..100).map(|i| (i as f32 * 0.2).sin()).collect())
            .unwrap();
        let y = model.reconstruct(&w).unwrap();
        assert_eq!(y.shape(), &[100, 1]);
        assert!(y.is_finite());
    }

    #[test]
    fn encoding_must_compress() {
        let cfg = AutoencoderConfig {
            window_size: 4,
            feature_count: 2,
            encoding_size: 8,
            ..AutoencoderConfig::default()
        };
        assert!(matches!(build_autoencoder(&cfg, 0), Err(ModelError::Config(_))));
    }

    #[test]
    fn seeded_builds_identical() {
        let cfg = AutoencoderConfig {
            outer_layer_sizes: vec![8, 6],
            encoding_size: 3,
            window_size: 10,
            feature_count: 2,
        };
        assert_eq!(build_autoencoder(&cfg, 7).unwrap(), build_autoencoder(&cfg, 7).unwrap());
        assert_ne!(build_autoencoder(&cfg, 7).unwrap(), build_autoencoder(&cfg, 8).unwrap());
    }

    #[test]
    fn param_count_matches_layout() {
        for cfg in [
            AutoencoderConfig::default(),
            AutoencoderConfig {
                window_size: 20,
                feature_count: 3,
                outer_layer_sizes: vec![16, 8, 4],
                encoding_size: 2,
            },
        ] {
            let m = build_autoencoder(&cfg, 1).unwrap();
            assert_eq!(m.param_count(), cfg.param_count());
        }
        assert_eq!(AutoencoderConfig::default().param_count(), 150_209);
    }

    #[test]
    fn layout_names_and_order() {
        let cfg = AutoencoderConfig {
            window_size: 10,
            feature_count: 1,
            outer_layer_sizes: vec![4, 3],
            encoding_size: 2,
        };
        let m = build_autoencoder(&cfg, 0).unwrap();
        let names: Vec<String> = m.params().map(|(n, _)| n).collect();
        assert_eq!(names.first().unwrap(), "enc.l0.w");
        assert_eq!(names[6], "enc.code.w");
        assert_eq!(names.last().unwrap(), "dec.out.b");
        assert_eq!(names.len(), 3 * 5 + 2);
    }

    #[test]
    fn zero_weight_gradient_when_reconstruction_exact() {
        // a model whose output is identically zero reconstructs all-zero windows exactly
        let cfg = AutoencoderConfig {
            window_size: 6,
            feature_count: 1,
            outer_layer_sizes: vec![3],
            encoding_size: 2,
        };
        let mut m = AutoencoderModel::<f64>::build(&cfg, 0).unwrap();
        for t in m.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Array3::<f64>::zeros((6, 2, 1));
        let (loss, g) = m.loss_and_grads(x.view(), 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.get("dec.out.w").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.get("dec.out.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l2_gradient_is_two_lambda_w() {
        let cfg = AutoencoderConfig {
            window_size: 6,
            feature_count: 1,
            outer_layer_sizes: vec![3],
            encoding_size: 2,
        };
        let m = AutoencoderModel::<f64>::build(&cfg, 4).unwrap();
        let x = Array3::<f64>::from_shape_fn((6, 2, 1), |(t, b, _)| (t as f64 + b as f64).sin());
        let (_, g0) = m.loss_and_grads(x.view(), 0.0).unwrap();
        let lambda = 0.05;
        let (_, g1) = m.loss_and_grads(x.view(), lambda).unwrap();
        for ((name, a), (_, b)) in g0.iter().zip(g1.iter()) {
            let p = m.param_set();
            let w = p.get(name).unwrap();
            for k in 0..a.len() {
                let expected = if is_weight(name) { 2.0 * lambda * w.data()[k] } else { 0.0 };
                assert!((b.data()[k] - a.data()[k] - expected).abs() < 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn backward_rejects_mismatched_gradient() {
        let cfg = AutoencoderConfig {
            window_size: 4,
            feature_count: 1,
            outer_layer_sizes: vec![2],
            encoding_size: 1,
        };
        let m = AutoencoderModel::<f64>::build(&cfg, 0).unwrap();
        let x = Array3::<f64>::zeros((4, 3, 1));
        let (_, cache) = m.forward_batch(x.view()).unwrap();
        let bad = Array3::<f64>::zeros((4, 2, 1));
        assert!(matches!(
            m.backward(&cache, bad.view(), 0.0),
            Err(ModelError::Nn(NnError::State(_)))
        ));
    }

    /// Largest relative error between analytic and central-difference gradients.
    fn max_gradient_error(cfg: &AutoencoderConfig, batch: usize, lambda: f64) -> f64 {
        let model = AutoencoderModel::<f64>::build(cfg, 17).unwrap();
        let x = Array3::<f64>::from_shape_fn((cfg.window_size, batch, cfg.feature_count), |(t, b, f)| {
            (0.7 * t as f64 + 1.3 * b as f64 + 0.4 * f as f64).sin()
        });
        let (_, grads) = model.loss_and_grads(x.view(), lambda).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for (idx, (name, g)) in grads.iter().enumerate() {
            for k in 0..g.len() {
                let mut plus = model.clone();
                plus.params_mut()[idx].data_mut()[k] += h;
                let mut minus = model.clone();
                minus.params_mut()[idx].data_mut()[k] -= h;
                let numeric = (plus.objective(x.view(), lambda).unwrap()
                    - minus.objective(x.view(), lambda).unwrap())
                    / (2.0 * h);
                let analytic = g.data()[k];
                let abs = (numeric - analytic).abs();
                let err = if abs < 1e-6 { 0.0 } else { abs / numeric.abs().max(analytic.abs()) };
                assert!(err < 1e-4, "{name}[{k}]: analytic {analytic}, numeric {numeric}");
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = AutoencoderConfig {
            window_size: 8,
            feature_count: 1,
            outer_layer_sizes: vec![8],
            encoding_size: 4,
        };
        max_gradient_error(&cfg, 2, 1e-3);
    }

    #[test]
    fn stacked_gradients_match_finite_differences() {
        let cfg = AutoencoderConfig {
            window_size: 5,
            feature_count: 2,
            outer_layer_sizes: vec![4, 3],
            encoding_size: 2,
        };
        max_gradient_error(&cfg, 3, 0.0);
    }
}
