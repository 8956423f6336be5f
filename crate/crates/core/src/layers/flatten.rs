use super::{missing_cache, split_batch};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-major reshape of every sample to a vector.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    cached_dims: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub(super) fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.is_empty() {
            return Err(Error::Shape("flatten needs at least one sample axis".into()));
        }
        Ok(vec![input.iter().product()])
    }

    pub(super) fn infer<T: Scalar>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, sample) = split_batch("flatten", input.dims())?;
        let width = sample.iter().product::<usize>();
        input.clone().reshape(&[batch, width])
    }

    pub(super) fn forward_train<T: Scalar>(&mut self, input: &Tensor<T>, _seed: u64) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.cached_dims = Some(input.dims().to_vec());
        Ok(out)
    }

    pub(super) fn backward<T: Scalar>(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let dims = self.cached_dims.as_ref().ok_or_else(|| missing_cache("flatten"))?;
        grad_output.clone().reshape(dims)
    }
}
