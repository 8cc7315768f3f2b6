use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{glorot_uniform, shape_err, NnError, Scalar, Tensor};

/// Affine layer `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<F = f32> {
    /// `[out, in]`
    pub w: Tensor<F>,
    /// `[out]`
    pub b: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> DenseParams<F> {
    pub fn new(w: Tensor<F>, b: Tensor<F>) -> Result<Self, NnError> {
        if w.rank() != 2 || b.rank() != 1 || w.shape()[0] != b.shape()[0] {
            return shape_err(format!(
                "dense weight {:?} and bias {:?} disagree",
                w.shape(),
                b.shape()
            ));
        }
        Ok(Self { w, b })
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, input_size: usize, output_size: usize) -> Self {
        Self {
            w: glorot_uniform(rng, output_size, input_size, input_size, output_size),
            b: Tensor::zeros(&[output_size]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.w.shape()[0]
    }

    /// Row-wise affine map over `[rows, in]`.
    pub fn forward_rows(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>, NnError> {
        if x.ncols() != self.input_size() {
            return shape_err(format!(
                "dense expects {} inputs, got {}",
                self.input_size(),
                x.ncols()
            ));
        }
        let w = self.w.view2()?;
        let b = self.b.view1()?;
        let mut y = x.dot(&w.t());
        y += &b;
        Ok(y)
    }
}

/// Applies the layer to a vector `[in]` or per timestep to a sequence `[T, in]`.
pub fn dense_forward<F: Scalar>(
    params: &DenseParams<F>,
    input: &Tensor<F>,
) -> Result<Tensor<F>, NnError> {
    match input.rank() {
        1 => {
            let x = input.view1()?.insert_axis(Axis(0));
            let y = params.forward_rows(x)?;
            Ok(Tensor::from_array(y.remove_axis(Axis(0))))
        }
        2 => Ok(Tensor::from_array(params.forward_rows(input.view2()?)?)),
        r => shape_err(format!("dense input must have rank 1 or 2, got {r}")),
    }
}

/// Returns `(dx, grads)` for a row-wise forward pass over `x`.
pub fn dense_backward<F: Scalar>(
    params: &DenseParams<F>,
    x: ArrayView2<'_, F>,
    dy: ArrayView2<'_, F>,
) -> Result<(Array2<F>, DenseGrads<F>), NnError> {
    if dy.ncols() != params.output_size() || dy.nrows() != x.nrows() {
        return shape_err("dense output gradient does not match forward shape");
    }
    let w = params.w.view2()?;
    let gw = dy.t().dot(&x);
    let gb = dy.sum_axis(Axis(0));
    let dx = dy.dot(&w);
    Ok((dx, DenseGrads { w: gw, b: gb }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: Vec<f32>, out: usize, inp: usize, b: Vec<f32>) -> DenseParams<f32> {
        DenseParams::new(
            Tensor::new(vec![out, inp], w).unwrap(),
            Tensor::from_vec(b),
        )
        .unwrap()
    }

    #[test]
    fn identity_passthrough() {
        let p = params(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0, 0.0]);
        let x = Tensor::from_vec(vec![0.25, -3.0]);
        assert_eq!(dense_forward(&p, &x).unwrap(), x);
    }

    #[test]
    fn scalar_affine() {
        let p = params(vec![2.0], 1, 1, vec![1.0]);
        let y = dense_forward(&p, &Tensor::from_vec(vec![3.0])).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn sequence_shape() {
        let p = params(vec![1.0; 6], 2, 3, vec![0.0, 0.5]);
        let x = Tensor::new(vec![5, 3], vec![1.0; 15]).unwrap();
        let y = dense_forward(&p, &x).unwrap();
        assert_eq!(y.shape(), &[5, 2]);
        assert_eq!(&y.data()[..2], &[3.0, 3.5]);
    }

    #[test]
    fn mismatched_input_rejected() {
        let p = params(vec![1.0; 6], 2, 3, vec![0.0, 0.0]);
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(matches!(dense_forward(&p, &x), Err(NnError::Shape(_))));
    }
}
