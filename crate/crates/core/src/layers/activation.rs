use super::missing_cache;
use crate::error::Result;
use crate::ops::{relu, relu_backward, softmax_rows, softmax_rows_backward};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { cached_input: None }
    }

    pub(super) fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    pub(super) fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(relu(input))
    }

    pub(super) fn forward_train(&mut self, input: &Tensor<T>, _seed: u64) -> Result<Tensor<T>> {
        self.cached_input = Some(input.clone());
        Ok(relu(input))
    }

    pub(super) fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cached_input.as_ref().ok_or_else(|| missing_cache("relu"))?;
        relu_backward(input, grad_output)
    }

    pub(super) fn branch_pattern(&self, sink: &mut Vec<usize>) {
        if let Some(x) = &self.cached_input {
            sink.extend(x.data().iter().map(|&v| usize::from(v > T::zero())));
        }
    }
}

/// Output softmax over `batch × classes`.
///
/// Training never runs this layer: the model stops at the logits and the
/// loss applies softmax and cross-entropy together.
#[derive(Clone, Debug, Default)]
pub struct Softmax<T> {
    cached_output: Option<Tensor<T>>,
}

impl<T: Scalar> Softmax<T> {
    pub fn new() -> Self {
        Softmax { cached_output: None }
    }

    pub(super) fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    pub(super) fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        softmax_rows(input)
    }

    pub(super) fn forward_train(&mut self, input: &Tensor<T>, _seed: u64) -> Result<Tensor<T>> {
        let out = softmax_rows(input)?;
        self.cached_output = Some(out.clone());
        Ok(out)
    }

    pub(super) fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let probs = self.cached_output.as_ref().ok_or_else(|| missing_cache("softmax"))?;
        softmax_rows_backward(probs, grad_output)
    }
}
