use ndarray::{Array, Dimension, Zip};

use super::{Scalar, Tensor};

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Elementwise `max(0, x)`.
pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu_inplace<F: Scalar, D: Dimension>(x: &mut Array<F, D>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Gradient through ReLU given its output.
pub fn relu_backward<F: Scalar, D: Dimension>(out: &Array<F, D>, grad: &mut Array<F, D>) {
    Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= F::zero() {
            *g = F::zero();
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::<f32>::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_of_negatives_is_zero() {
        let x = Tensor::<f32>::from_vec(vec![-3.0, -0.5, -1e-9]);
        assert!(relu(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_is_idempotent() {
        let x = Tensor::<f32>::from_vec(vec![-2.0, 0.5, 7.0, -0.1]);
        assert_eq!(relu(&relu(&x)), relu(&x));
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0f64), 0.5);
    }
}
