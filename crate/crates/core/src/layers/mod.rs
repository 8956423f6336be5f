//! Differentiable layers.
//!
//! Every layer works on a batch whose first axis is the sample index.
//! `forward` in [`Mode::Train`] caches what `backward` needs; [`Mode::Eval`]
//! (and [`Layer::infer`]) never touches layer state.

mod activation;
mod conv;
mod dense;
mod dropout;
mod flatten;
mod pool;

pub use activation::{Relu, Softmax};
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use flatten::Flatten;
pub use pool::MaxPool2x2;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-call forward settings. `seed` drives dropout masks; the model derives
/// one per layer so every dropout layer sees its own stream.
#[derive(Clone, Copy, Debug)]
pub struct ForwardCtx {
    pub mode: Mode,
    pub seed: u64,
}

impl ForwardCtx {
    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            seed,
        }
    }

    pub fn eval() -> Self {
        ForwardCtx {
            mode: Mode::Eval,
            seed: 0,
        }
    }

    pub fn for_layer(&self, index: usize) -> Self {
        ForwardCtx {
            mode: self.mode,
            seed: seed::derive(self.seed, &[index as u64]),
        }
    }
}

/// One trainable tensor with its gradient and Adadelta accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Running average of squared gradients.
    pub acc_grad: Tensor<T>,
    /// Running average of squared updates.
    pub acc_delta: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let zeros = Tensor::new(value.shape().clone(), T::zero());
        Param {
            grad: zeros.clone(),
            acc_grad: zeros.clone(),
            acc_delta: zeros,
            value,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub weights: Param<T>,
    pub bias: Param<T>,
    grads_ready: bool,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Self {
        ParamSet {
            weights: Param::new(weights),
            bias: Param::new(bias),
            grads_ready: false,
        }
    }

    pub fn count(&self) -> usize {
        self.weights.numel() + self.bias.numel()
    }

    /// True once a backward pass has filled the gradient buffers and no
    /// optimizer step has consumed them yet.
    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn set_grads_ready(&mut self, ready: bool) {
        self.grads_ready = ready;
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weights, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weights, &mut self.bias]
    }
}

/// Glorot/Xavier uniform sample in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_uniform<T: Scalar, R: Rng>(
    dims: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::from_vec(dims, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv,
    Maxpool,
    Dropout,
    Flatten,
    Relu,
    Softmax,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv => "conv",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Dropout => "dropout",
            LayerKind::Flatten => "flatten",
            LayerKind::Relu => "relu",
            LayerKind::Softmax => "softmax",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv(Conv2d<T>),
    MaxPool(MaxPool2x2),
    Dropout(Dropout<T>),
    Flatten(Flatten),
    Relu(Relu<T>),
    Softmax(Softmax<T>),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            Layer::Dense($l) => $body,
            Layer::Conv($l) => $body,
            Layer::MaxPool($l) => $body,
            Layer::Dropout($l) => $body,
            Layer::Flatten($l) => $body,
            Layer::Relu($l) => $body,
            Layer::Softmax($l) => $body,
        }
    };
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Conv(_) => LayerKind::Conv,
            Layer::MaxPool(_) => LayerKind::Maxpool,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::Flatten(_) => LayerKind::Flatten,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::Softmax(_) => LayerKind::Softmax,
        }
    }

    /// Per-sample output dims for per-sample input dims.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        dispatch!(self, l => l.output_dims(input))
    }

    pub fn forward(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        match ctx.mode {
            Mode::Eval => self.infer(input),
            Mode::Train => dispatch!(self, l => l.forward_train(input, ctx.seed)),
        }
    }

    /// Eval-mode forward. Pure: no caches are written.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        dispatch!(self, l => l.infer(input))
    }

    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        dispatch!(self, l => l.backward(grad_output))
    }

    pub fn params(&self) -> Option<&ParamSet<T>> {
        match self {
            Layer::Dense(l) => Some(&l.params),
            Layer::Conv(l) => Some(&l.params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParamSet<T>> {
        match self {
            Layer::Dense(l) => Some(&mut l.params),
            Layer::Conv(l) => Some(&mut l.params),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().map_or(0, ParamSet::count)
    }

    /// Appends the piecewise-linear branch decisions (ReLU signs, pooling
    /// winners) recorded by the last train-mode forward. Two forwards that
    /// produce the same pattern lie in the same linear region.
    pub fn branch_pattern(&self, sink: &mut Vec<usize>) {
        match self {
            Layer::Relu(l) => l.branch_pattern(sink),
            Layer::MaxPool(l) => l.branch_pattern(sink),
            _ => {}
        }
    }
}

pub(crate) fn missing_cache(kind: &str) -> Error {
    Error::State(format!(
        "{kind} backward called without a preceding train-mode forward"
    ))
}

/// Splits a batched tensor's dims into `(batch, per-sample dims)`.
pub(crate) fn split_batch<'a>(kind: &str, dims: &'a [usize]) -> Result<(usize, &'a [usize])> {
    match dims.split_first() {
        Some((&n, rest)) if !rest.is_empty() => Ok((n, rest)),
        _ => Err(Error::Shape(format!(
            "{kind} expects a batched tensor, got dims {dims:?}"
        ))),
    }
}

pub(crate) fn batched_dims(batch: usize, sample: &[usize]) -> Vec<usize> {
    let mut d = Vec::with_capacity(sample.len() + 1);
    d.push(batch);
    d.extend_from_slice(sample);
    d
}
