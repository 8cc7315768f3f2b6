use ndarray::{Array, ArrayView, Dimension, Zip};

use super::{shape_err, NnError, Scalar, Tensor};

/// Mean over all elements of the squared differences.
pub fn mse_loss<F: Scalar>(input: &Tensor<F>, prediction: &Tensor<F>) -> Result<F, NnError> {
    if input.shape() != prediction.shape() {
        return shape_err(format!(
            "mse operands disagree: {:?} vs {:?}",
            input.shape(),
            prediction.shape()
        ));
    }
    if input.is_empty() {
        return shape_err("mse of empty tensors");
    }
    let sum: F = input
        .data()
        .iter()
        .zip(prediction.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / F::lit(input.len() as f64))
}

/// Loss value and its gradient with respect to `prediction`.
pub fn mse_loss_grad<F: Scalar, D: Dimension>(
    target: ArrayView<'_, F, D>,
    prediction: ArrayView<'_, F, D>,
) -> Result<(F, Array<F, D>), NnError> {
    if target.shape() != prediction.shape() {
        return shape_err("mse operands disagree");
    }
    let n = F::lit(target.len() as f64);
    let mut grad = Array::<F, D>::zeros(prediction.raw_dim());
    let mut sum = F::zero();
    let two_over_n = F::lit(2.0) / n;
    Zip::from(&mut grad)
        .and(&target)
        .and(&prediction)
        .for_each(|g, &t, &p| {
            let d = p - t;
            sum = sum + d * d;
            *g = two_over_n * d;
        });
    Ok((sum / n, grad))
}
