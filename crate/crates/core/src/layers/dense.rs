use rand::Rng;

use super::{glorot_uniform, missing_cache, split_batch, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{MatRef, Scalar, Tensor};

/// Fully connected layer, `y = x · Wᵀ + b`. Weights are stored
/// `n_out × n_in`.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub params: ParamSet<T>,
    n_in: usize,
    n_out: usize,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Result<Self> {
        let weights = glorot_uniform(&[n_out, n_in], n_in, n_out, rng)?;
        let bias = Tensor::zeros(&[n_out])?;
        Ok(Self::from_params(weights, bias)?)
    }

    pub fn from_params(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[n_out, n_in] = weights.dims() else {
            return Err(Error::Shape(format!(
                "dense weights must be n_out×n_in, got {}",
                weights.shape()
            )));
        };
        if bias.dims() != [n_out] {
            return Err(Error::Shape(format!(
                "dense bias {} does not match {n_out} outputs",
                bias.shape()
            )));
        }
        Ok(Dense {
            params: ParamSet::new(weights, bias),
            n_in,
            n_out,
            cached_input: None,
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub(super) fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input != [self.n_in] {
            return Err(Error::Shape(format!(
                "dense layer expects width {}, got {input:?}",
                self.n_in
            )));
        }
        Ok(vec![self.n_out])
    }

    pub(super) fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, sample) = split_batch("dense", input.dims())?;
        self.output_dims(sample)?;
        let mut out = Vec::with_capacity(batch * self.n_out);
        for _ in 0..batch {
            out.extend_from_slice(self.params.bias.value.data());
        }
        T::gemm(
            batch,
            self.n_in,
            self.n_out,
            T::one(),
            MatRef::row_major(input.data(), self.n_in),
            MatRef::transposed(self.params.weights.value.data(), self.n_in),
            T::one(),
            &mut out,
        );
        Tensor::from_vec(&[batch, self.n_out], out)
    }

    pub(super) fn forward_train(&mut self, input: &Tensor<T>, _seed: u64) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    pub(super) fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cached_input.as_ref().ok_or_else(|| missing_cache("dense"))?;
        let batch = input.dims()[0];
        if grad_output.dims() != [batch, self.n_out] {
            return Err(Error::Shape(format!(
                "dense grad {} does not match forward output {batch}×{}",
                grad_output.shape(),
                self.n_out
            )));
        }
        let g = grad_output.data();

        T::gemm(
            self.n_out,
            batch,
            self.n_in,
            T::one(),
            MatRef::transposed(g, self.n_out),
            MatRef::row_major(input.data(), self.n_in),
            T::zero(),
            self.params.weights.grad.data_mut(),
        );
        let gb = self.params.bias.grad.data_mut();
        gb.iter_mut().for_each(|v| *v = T::zero());
        for row in g.chunks_exact(self.n_out) {
            for (b, &v) in gb.iter_mut().zip(row) {
                *b = *b + v;
            }
        }

        let mut grad_input = vec![T::zero(); batch * self.n_in];
        T::gemm(
            batch,
            self.n_out,
            self.n_in,
            T::one(),
            MatRef::row_major(g, self.n_out),
            MatRef::row_major(self.params.weights.value.data(), self.n_in),
            T::zero(),
            &mut grad_input,
        );
        self.params.set_grads_ready(true);
        Tensor::from_vec(&[batch, self.n_in], grad_input)
    }
}
