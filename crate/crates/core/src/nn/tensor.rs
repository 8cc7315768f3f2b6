use ndarray::{Array, ArrayView1, ArrayView2, ArrayViewMut2, Dimension, Ix2};

use super::{shape_err, NnError, Scalar};

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return shape_err(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<F>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_array<D: Dimension>(a: Array<F, D>) -> Self {
        let shape = a.shape().to_vec();
        let data = if a.is_standard_layout() {
            a.into_raw_vec_and_offset().0
        } else {
            a.iter().copied().collect()
        };
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn view1(&self) -> Result<ArrayView1<'_, F>, NnError> {
        if self.rank() != 1 {
            return shape_err(format!("expected rank 1, got shape {:?}", self.shape));
        }
        Ok(ArrayView1::from(&self.data[..]))
    }

    pub fn view2(&self) -> Result<ArrayView2<'_, F>, NnError> {
        if self.rank() != 2 {
            return shape_err(format!("expected rank 2, got shape {:?}", self.shape));
        }
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data)
            .map_err(|e| NnError::Shape(e.to_string()))
    }

    pub fn view2_mut(&mut self) -> Result<ArrayViewMut2<'_, F>, NnError> {
        if self.rank() != 2 {
            return shape_err(format!("expected rank 2, got shape {:?}", self.shape));
        }
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.data)
            .map_err(|e| NnError::Shape(e.to_string()))
    }

    pub fn to_array2(&self) -> Result<Array<F, Ix2>, NnError> {
        Ok(self.view2()?.to_owned())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn map<G: Scalar>(&self, f: impl Fn(F) -> G) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        self.map(|v| G::lit(v.as_f64()))
    }
}

/// Ordered collection of named tensors: a parameter set or its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<F = f32> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<F>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// L2 norm over every value of every tensor.
    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|(_, t)| t.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: F) {
        for (_, t) in &mut self.entries {
            for v in t.data_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    pub fn into_entries(self) -> Vec<(String, Tensor<F>)> {
        self.entries
    }
}

impl<F: Scalar> FromIterator<(String, Tensor<F>)> for ParamSet<F> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<F>)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]),
            Err(NnError::Shape(_))
        ));
    }

    #[test]
    fn views_check_rank() {
        let t = Tensor::<f32>::zeros(&[4]);
        assert!(t.view2().is_err());
        assert_eq!(t.view1().unwrap().len(), 4);
    }

    #[test]
    fn global_norm_spans_tensors() {
        let mut p = ParamSet::<f64>::new();
        p.push("a", Tensor::from_vec(vec![3.0]));
        p.push("b", Tensor::from_vec(vec![4.0]));
        assert_eq!(p.global_norm(), 5.0);
        assert_eq!(p.numel(), 2);
    }
}
