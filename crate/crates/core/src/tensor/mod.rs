//! Dense tensor engine with reverse-mode automatic differentiation.
//!
//! Row-major tensors, a flat op tape, an ADAM optimizer and a central
//! finite-difference oracle. Scalars have the empty shape `[]`.

pub mod adam;
pub mod fdcheck;
pub mod kernels;
pub mod tape;

use crate::scalar::Scalar;

/// Dense row-major tensor.
///
/// Invariant: `shape.iter().product() == data.len()` (empty shape is a
/// scalar with one element).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Scalar tensor (shape `[]`).
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f64s(shape: &[usize], values: &[f64]) -> Self {
        Tensor::new(shape.to_vec(), values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> T {
        assert!(
            self.is_scalar(),
            "item() on non-scalar tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the data under a new shape of equal element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {:?} -> {:?} changes element count",
            self.shape,
            shape
        );
        self.shape = shape.to_vec();
        self
    }

    /// Index of the largest entry, ties broken by lowest index.
    pub fn argmax(&self) -> usize {
        kernels::argmax(&self.data)
    }

    /// Euclidean norm of the flattened data.
    pub fn l2_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

impl<T: Scalar> std::ops::Index<usize> for Tensor<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_has_empty_shape() {
        let t = Tensor::scalar(2.5f64);
        assert_eq!(t.shape(), &[] as &[usize]);
        assert_eq!(t.item(), 2.5);
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn shape_data_mismatch_panics() {
        let _ = Tensor::new(vec![2, 2], vec![1.0f64, 2.0, 3.0]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let t = Tensor::new(vec![4], vec![1.0f64, 3.0, 3.0, 2.0]);
        assert_eq!(t.argmax(), 1);
    }

    #[test]
    fn works_for_f32_too() {
        let t = Tensor::<f32>::from_f64s(&[2], &[3.0, 4.0]);
        assert_eq!(t.l2_norm(), 5.0f32);
    }
}
