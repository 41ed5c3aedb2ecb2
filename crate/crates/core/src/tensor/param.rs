//! Named trainable parameters with gradient and optimizer-state buffers.

use super::{Scalar, Tensor};
use crate::Result;

/// One trainable array plus its gradient and Adam moment estimates, all the
/// same shape by construction.
#[derive(Debug, Clone)]
pub struct ParamTensor<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            value,
            grad: Tensor::zeros(shape.clone()),
            adam_m: Tensor::zeros(shape.clone()),
            adam_v: Tensor::zeros(shape),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// `grad += contribution` (shapes must match).
    pub fn accumulate(&mut self, contribution: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(contribution)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything that can hand out its parameters in a stable order. The order
/// defines checkpoint layout, optimizer iteration, and census reports.
pub trait ParamStore<T: Scalar> {
    fn params(&self) -> Vec<&ParamTensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>>;

    /// Total number of scalar parameters.
    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl<T: Scalar> ParamStore<T> for Vec<ParamTensor<T>> {
    fn params(&self) -> Vec<&ParamTensor<T>> {
        self.iter().collect()
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        self.iter_mut().collect()
    }
}
