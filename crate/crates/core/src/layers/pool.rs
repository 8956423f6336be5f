use super::{missing_cache, split_batch};
use crate::error::{Error, Result};
use crate::ops::{maxpool2x2, maxpool2x2_backward, ArgmaxMap};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, Default)]
pub struct MaxPool2x2 {
    cache: Option<ArgmaxMap>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub(super) fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![c, h / 2, w / 2]),
            _ => Err(Error::Shape(format!(
                "2×2 pooling needs C×H×W with even H and W, got {input:?}"
            ))),
        }
    }

    fn check<T: Scalar>(&self, input: &Tensor<T>) -> Result<()> {
        let (_, sample) = split_batch("maxpool", input.dims())?;
        self.output_dims(sample).map(|_| ())
    }

    pub(super) fn infer<T: Scalar>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(input)?;
        Ok(maxpool2x2(input)?.0)
    }

    pub(super) fn forward_train<T: Scalar>(&mut self, input: &Tensor<T>, _seed: u64) -> Result<Tensor<T>> {
        self.check(input)?;
        let (out, map) = maxpool2x2(input)?;
        self.cache = Some(map);
        Ok(out)
    }

    pub(super) fn backward<T: Scalar>(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let map = self.cache.as_ref().ok_or_else(|| missing_cache("maxpool"))?;
        maxpool2x2_backward(map, grad_output)
    }

    pub(super) fn branch_pattern(&self, sink: &mut Vec<usize>) {
        if let Some(map) = &self.cache {
            sink.extend_from_slice(map.winners());
        }
    }
}
