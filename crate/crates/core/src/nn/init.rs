use rand::Rng;

use super::{Scalar, Tensor};

/// Uniform Glorot initialization of a `[rows, cols]` matrix.
pub fn glorot_uniform<F: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| F::lit(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("rows*cols values")
}
