use rand::Rng;

use super::{batched_dims, glorot_uniform, missing_cache, split_batch, ParamSet};
use crate::error::{Error, Result};
use crate::ops::{conv2d_backward_batch, conv2d_forward_batch, ConvGeometry};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
struct ConvCache<T> {
    geometry: ConvGeometry,
    batch: usize,
    cols: Vec<T>,
}

/// Valid, stride-1 convolution layer over `N × C × H × W` batches.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub params: ParamSet<T>,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        let receptive = kh * kw;
        let weights = glorot_uniform(
            &[out_channels, in_channels, kh, kw],
            in_channels * receptive,
            out_channels * receptive,
            rng,
        )?;
        Self::from_params(weights, Tensor::zeros(&[out_channels])?)
    }

    pub fn from_params(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[c_out, _, _, _] = weights.dims() else {
            return Err(Error::Shape(format!(
                "conv weights must be O×C×kH×kW, got {}",
                weights.shape()
            )));
        };
        if bias.dims() != [c_out] {
            return Err(Error::Shape(format!(
                "conv bias {} does not match {c_out} output channels",
                bias.shape()
            )));
        }
        Ok(Conv2d {
            params: ParamSet::new(weights, bias),
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.params.weights.value.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.params.weights.value.dims()[0]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        let d = self.params.weights.value.dims();
        (d[2], d[3])
    }

    fn geometry(&self, sample: &[usize]) -> Result<ConvGeometry> {
        ConvGeometry::new(sample, self.params.weights.value.dims())
    }

    pub(super) fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(self.geometry(input)?.output_dims().to_vec())
    }

    fn run(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (batch, sample) = split_batch("conv", input.dims())?;
        let geometry = self.geometry(sample)?;
        let (out, cols) = conv2d_forward_batch(
            &geometry,
            batch,
            input.data(),
            self.params.weights.value.data(),
            self.params.bias.value.data(),
        );
        let out = Tensor::from_vec(&batched_dims(batch, &geometry.output_dims()), out)?;
        Ok((
            out,
            ConvCache {
                geometry,
                batch,
                cols,
            },
        ))
    }

    pub(super) fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(input)?.0)
    }

    pub(super) fn forward_train(&mut self, input: &Tensor<T>, _seed: u64) -> Result<Tensor<T>> {
        let (out, cache) = self.run(input)?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub(super) fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("conv"))?;
        let g = &cache.geometry;
        let expected = batched_dims(cache.batch, &g.output_dims());
        if grad_output.dims() != expected.as_slice() {
            return Err(Error::Shape(format!(
                "conv grad {} does not match forward output {expected:?}",
                grad_output.shape()
            )));
        }
        let ParamSet { weights, bias, .. } = &mut self.params;
        let grad_input = conv2d_backward_batch(
            g,
            cache.batch,
            &cache.cols,
            weights.value.data(),
            grad_output.data(),
            weights.grad.data_mut(),
            bias.grad.data_mut(),
        );
        let dims = batched_dims(cache.batch, &[g.in_channels, g.height, g.width]);
        self.params.set_grads_ready(true);
        Tensor::from_vec(&dims, grad_input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn param_counts() {
        let mut rng = seed::rng(1);
        assert_eq!(Conv2d::<f32>::new(1, 30, (5, 5), &mut rng).unwrap().params.count(), 780);
        assert_eq!(Conv2d::<f32>::new(30, 15, (3, 3), &mut rng).unwrap().params.count(), 4_065);
    }

    #[test]
    fn batched_output_shape() {
        let c = Conv2d::<f32>::new(30, 15, (3, 3), &mut seed::rng(1)).unwrap();
        let y = c.infer(&Tensor::zeros(&[4, 30, 14, 14]).unwrap()).unwrap();
        assert_eq!(y.dims(), &[4, 15, 12, 12]);
    }

    #[test]
    fn channel_mismatch() {
        let c = Conv2d::<f32>::new(2, 3, (3, 3), &mut seed::rng(1)).unwrap();
        assert!(c.infer(&Tensor::zeros(&[1, 1, 8, 8]).unwrap()).is_err());
    }
}
