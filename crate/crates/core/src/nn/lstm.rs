//! LSTM layer with backpropagation through time.
//!
//! Gate blocks are stacked in the order (input, forget, cell, output) along
//! the first axis of `W`, `U` and `b`, so row `k·hidden + j` belongs to gate
//! `k` of unit `j`. Sequences are laid out `[T, B, features]`.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use super::{glorot_uniform, shape_err, sigmoid, NnError, Scalar, Tensor};

/// Number of stacked gate blocks.
pub const GATE_COUNT: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<F = f32> {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `[4·hidden, input]`
    pub w: Tensor<F>,
    /// `[4·hidden, hidden]`
    pub u: Tensor<F>,
    /// `[4·hidden]`
    pub b: Tensor<F>,
}

/// Intermediates kept from the forward pass.
#[derive(Clone, Debug)]
pub struct LstmCache<F> {
    input: Array3<F>,
    /// Hidden states, `[T + 1, B, H]` with the zero initial state at index 0.
    hs: Array3<F>,
    cs: Array3<F>,
    /// Activated gates `[T, B, 4H]`.
    gates: Array3<F>,
    tanh_c: Array3<F>,
}

impl<F> LstmCache<F> {
    pub fn steps(&self) -> usize {
        self.gates.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct LstmGrads<F> {
    pub w: Array2<F>,
    pub u: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> LstmParams<F> {
    pub fn new(w: Tensor<F>, u: Tensor<F>, b: Tensor<F>) -> Result<Self, NnError> {
        if w.rank() != 2 || u.rank() != 2 || b.rank() != 1 {
            return shape_err("lstm parameters must be [4H, I], [4H, H], [4H]");
        }
        let four_h = w.shape()[0];
        if four_h == 0 || four_h % GATE_COUNT != 0 {
            return shape_err(format!("lstm gate rows {four_h} not a multiple of 4"));
        }
        let hidden = four_h / GATE_COUNT;
        if u.shape() != [four_h, hidden] || b.shape() != [four_h] {
            return shape_err(format!(
                "lstm shapes disagree: W {:?}, U {:?}, b {:?}",
                w.shape(),
                u.shape(),
                b.shape()
            ));
        }
        Ok(Self {
            input_size: w.shape()[1],
            hidden_size: hidden,
            w,
            u,
            b,
        })
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let rows = GATE_COUNT * hidden_size;
        Self {
            input_size,
            hidden_size,
            w: Tensor::zeros(&[rows, input_size]),
            u: Tensor::zeros(&[rows, hidden_size]),
            b: Tensor::zeros(&[rows]),
        }
    }

    /// Glorot-uniform `W` and `U`, zero bias except a forget-gate bias of one.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input_size: usize, hidden_size: usize) -> Self {
        let rows = GATE_COUNT * hidden_size;
        let w = glorot_uniform(rng, rows, input_size, input_size, rows);
        let u = glorot_uniform(rng, rows, hidden_size, hidden_size, rows);
        let mut b = Tensor::zeros(&[rows]);
        for v in &mut b.data_mut()[hidden_size..2 * hidden_size] {
            *v = F::one();
        }
        Self {
            input_size,
            hidden_size,
            w,
            u,
            b,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }
}

/// Runs the recurrence over a batch `[T, B, input]` from a zero state.
///
/// Returns every hidden state `[T, B, H]`; callers wanting only the final
/// state take the last step.
pub fn lstm_forward_batch<F: Scalar>(
    params: &LstmParams<F>,
    input: ArrayView3<'_, F>,
) -> Result<(Array3<F>, LstmCache<F>), NnError> {
    let (steps, batch, features) = input.dim();
    if steps == 0 {
        return shape_err("lstm input needs at least one timestep");
    }
    if features != params.input_size {
        return shape_err(format!(
            "lstm expects {} input features, got {features}",
            params.input_size
        ));
    }
    let h = params.hidden_size;
    let w = params.w.view2()?;
    let u = params.u.view2()?;
    let b = params.b.view1()?;

    let input = Array3::from_shape_vec(input.raw_dim(), input.iter().copied().collect())
        .map_err(|e| NnError::Shape(e.to_string()))?;
    let x2 = input
        .view()
        .into_shape_with_order((steps * batch, features))
        .map_err(|e| NnError::Shape(e.to_string()))?;
    let mut zx = x2.dot(&w.t());
    zx += &b;
    let zx = zx
        .to_shape((steps, batch, GATE_COUNT * h))
        .map_err(|e| NnError::Shape(e.to_string()))?
        .into_owned();

    let mut hs = Array3::<F>::zeros((steps + 1, batch, h));
    let mut cs = Array3::<F>::zeros((steps + 1, batch, h));
    let mut gates = Array3::<F>::zeros((steps, batch, GATE_COUNT * h));
    let mut tanh_c = Array3::<F>::zeros((steps, batch, h));

    for t in 0..steps {
        let mut z = zx.slice(s![t, .., ..]).to_owned();
        let h_prev = hs.slice(s![t, .., ..]);
        ndarray::linalg::general_mat_mul(F::one(), &h_prev, &u.t(), F::one(), &mut z);

        let c_prev = cs.slice(s![t, .., ..]).to_owned();
        let mut c_next = Array2::<F>::zeros((batch, h));
        let mut h_next = Array2::<F>::zeros((batch, h));
        let mut tc = Array2::<F>::zeros((batch, h));
        for r in 0..batch {
            let zr = z.row(r);
            let zr = zr.as_slice().expect("contiguous gate row");
            let mut gr = gates.slice_mut(s![t, r, ..]);
            let gr = gr.as_slice_mut().expect("contiguous gate row");
            for j in 0..h {
                let ig = sigmoid(zr[j]);
                let fg = sigmoid(zr[h + j]);
                let cg = zr[2 * h + j].tanh();
                let og = sigmoid(zr[3 * h + j]);
                gr[j] = ig;
                gr[h + j] = fg;
                gr[2 * h + j] = cg;
                gr[3 * h + j] = og;
                let c = fg * c_prev[[r, j]] + ig * cg;
                let th = c.tanh();
                c_next[[r, j]] = c;
                tc[[r, j]] = th;
                h_next[[r, j]] = og * th;
            }
        }
        cs.slice_mut(s![t + 1, .., ..]).assign(&c_next);
        hs.slice_mut(s![t + 1, .., ..]).assign(&h_next);
        tanh_c.slice_mut(s![t, .., ..]).assign(&tc);
    }

    let out = hs.slice(s![1.., .., ..]).to_owned();
    Ok((
        out,
        LstmCache {
            input,
            hs,
            cs,
            gates,
            tanh_c,
        },
    ))
}

/// Single-sequence forward pass over `[T, input]`.
///
/// Returns `[T, hidden]` when `return_sequences` is set and the final hidden
/// state `[hidden]` otherwise.
pub fn lstm_forward<F: Scalar>(
    params: &LstmParams<F>,
    input: &Tensor<F>,
    return_sequences: bool,
) -> Result<(Tensor<F>, LstmCache<F>), NnError> {
    let x = input.view2()?.insert_axis(Axis(1));
    let (out, cache) = lstm_forward_batch(params, x)?;
    let steps = out.shape()[0];
    let out = out.remove_axis(Axis(1));
    let result = if return_sequences {
        Tensor::from_array(out)
    } else {
        Tensor::from_array(out.row(steps - 1).to_owned())
    };
    Ok((result, cache))
}

/// Backpropagation through time.
///
/// `d_out` is the gradient with respect to every emitted hidden state,
/// `[T, B, H]`. Returns the gradient with respect to the input and the
/// parameter gradients (without any regularization term).
pub fn lstm_backward<F: Scalar>(
    params: &LstmParams<F>,
    cache: &LstmCache<F>,
    d_out: ArrayView3<'_, F>,
) -> Result<(Array3<F>, LstmGrads<F>), NnError> {
    let (steps, batch, h) = d_out.dim();
    if steps != cache.steps() || h != params.hidden_size || batch != cache.input.shape()[1] {
        return shape_err("lstm output gradient does not match cached forward pass");
    }
    let features = params.input_size;
    let w = params.w.view2()?;
    let u = params.u.view2()?;

    let mut dz_all = Array3::<F>::zeros((steps, batch, GATE_COUNT * h));
    let mut dh_next = Array2::<F>::zeros((batch, h));
    let mut dc_next = Array2::<F>::zeros((batch, h));
    let one = F::one();

    for t in (0..steps).rev() {
        let g = cache.gates.slice(s![t, .., ..]);
        let tc = cache.tanh_c.slice(s![t, .., ..]);
        let c_prev = cache.cs.slice(s![t, .., ..]);
        let dh_in = d_out.slice(s![t, .., ..]);
        let mut dz = dz_all.slice_mut(s![t, .., ..]);
        for r in 0..batch {
            for j in 0..h {
                let ig = g[[r, j]];
                let fg = g[[r, h + j]];
                let cg = g[[r, 2 * h + j]];
                let og = g[[r, 3 * h + j]];
                let th = tc[[r, j]];
                let dh = dh_in[[r, j]] + dh_next[[r, j]];
                let d_o = dh * th;
                let dc = dh * og * (one - th * th) + dc_next[[r, j]];
                let d_i = dc * cg;
                let d_g = dc * ig;
                let d_f = dc * c_prev[[r, j]];
                dc_next[[r, j]] = dc * fg;
                dz[[r, j]] = d_i * ig * (one - ig);
                dz[[r, h + j]] = d_f * fg * (one - fg);
                dz[[r, 2 * h + j]] = d_g * (one - cg * cg);
                dz[[r, 3 * h + j]] = d_o * og * (one - og);
            }
        }
        dh_next = dz.dot(&u);
    }

    let rows = steps * batch;
    let dz2 = dz_all
        .view()
        .into_shape_with_order((rows, GATE_COUNT * h))
        .map_err(|e| NnError::Shape(e.to_string()))?;
    let x2 = reshape2(cache.input.view(), rows, features)?;
    let h_prev = cache.hs.slice(s![..steps, .., ..]);
    let h_prev2 = reshape2(h_prev, rows, h)?;

    let gw = dz2.t().dot(&x2);
    let gu = dz2.t().dot(&h_prev2);
    let gb = dz2.sum_axis(Axis(0));
    let dx = dz2
        .dot(&w)
        .to_shape((steps, batch, features))
        .map_err(|e| NnError::Shape(e.to_string()))?
        .into_owned();
    Ok((dx, LstmGrads { w: gw, u: gu, b: gb }))
}

fn reshape2<F: Scalar>(
    a: ArrayView3<'_, F>,
    rows: usize,
    cols: usize,
) -> Result<ArrayView2<'_, F>, NnError> {
    a.into_shape_with_order((rows, cols))
        .map_err(|e| NnError::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_output() {
        let p = LstmParams::<f32>::zeros(3, 5);
        let x = Tensor::new(vec![7, 3], (0..21).map(|v| v as f32 - 4.0).collect()).unwrap();
        let (y, _) = lstm_forward(&p, &x, true).unwrap();
        assert_eq!(y.shape(), &[7, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // gate weights w_i=0.5 w_f=-0.3 w_c=0.8 w_o=1.2, biases 0.1 0.2 -0.1 0.0, x=0.7
        let p = LstmParams::<f64>::new(
            Tensor::new(vec![4, 1], vec![0.5, -0.3, 0.8, 1.2]).unwrap(),
            Tensor::new(vec![4, 1], vec![0.9, 0.9, 0.9, 0.9]).unwrap(),
            Tensor::from_vec(vec![0.1, 0.2, -0.1, 0.0]),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 1], vec![0.7]).unwrap();
        let (y, _) = lstm_forward(&p, &x, false).unwrap();
        // i = σ(0.45) = 0.610639..., g = tanh(0.46) = 0.430084..., c = i·g
        // o = σ(0.84) = 0.698465..., h = o·tanh(c) = 0.179331...
        let expected = 0.179_331_187_586_121_3;
        assert_eq!(y.shape(), &[1]);
        assert!((y.data()[0] - expected).abs() < 1e-12, "{}", y.data()[0]);
    }

    #[test]
    fn window_shape_with_wide_hidden_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::<f32>::init(&mut rng, 1, 128);
        let x = Tensor::new(vec![100, 1], (0..100).map(|v| (v as f32 * 0.1).sin()).collect())
            .unwrap();
        let (y, _) = lstm_forward(&p, &x, true).unwrap();
        assert_eq!(y.shape(), &[100, 128]);
        assert!(y.is_finite());
    }

    #[test]
    fn input_width_mismatch_is_shape_error() {
        let p = LstmParams::<f32>::zeros(2, 3);
        let x = Tensor::new(vec![4, 3], vec![0.0; 12]).unwrap();
        assert!(matches!(lstm_forward(&p, &x, true), Err(NnError::Shape(_))));
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = LstmParams::<f32>::init(&mut rng, 2, 3);
        assert_eq!(p.b.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
