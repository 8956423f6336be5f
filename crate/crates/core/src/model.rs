//! Sequential model container and the two reference architectures.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Conv2d, Dense, Dropout, Flatten, ForwardCtx, Layer, MaxPool2x2, Mode, Relu, Softmax};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

pub use crate::data::CLASSES;
pub const INPUT_DIMS: [usize; 3] = [1, 32, 32];

/// Parameter total of [`build_mlp`]: `1024·512+512 + 512·128+128 + 128·10+10`.
pub const MLP_PARAMS: usize = 591_754;
/// The MLP total as printed in the original write-up, 9 short of the sum
/// of its own layer sizes.
pub const MLP_PARAMS_PUBLISHED: usize = 591_745;
pub const CNN_PARAMS: usize = 75_383;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Cnn,
    /// Anything else, e.g. the reduced networks used for gradient checks.
    Custom,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Mlp => "mlp",
            Architecture::Cnn => "cnn",
            Architecture::Custom => "custom",
        })
    }
}

/// Structural description of one layer, enough to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense { n_in: usize, n_out: usize },
    Conv { in_channels: usize, out_channels: usize, kernel: [usize; 2] },
    Maxpool,
    Dropout { rate: f64 },
    Flatten,
    Relu,
    Softmax,
}

impl LayerSpec {
    fn instantiate<T: Scalar, R: rand::Rng>(&self, rng: &mut R) -> Result<Layer<T>> {
        Ok(match *self {
            LayerSpec::Dense { n_in, n_out } => Layer::Dense(Dense::new(n_in, n_out, rng)?),
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel: [kh, kw],
            } => Layer::Conv(Conv2d::new(in_channels, out_channels, (kh, kw), rng)?),
            LayerSpec::Maxpool => Layer::MaxPool(MaxPool2x2::new()),
            LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)?),
            LayerSpec::Flatten => Layer::Flatten(Flatten::new()),
            LayerSpec::Relu => Layer::Relu(Relu::new()),
            LayerSpec::Softmax => Layer::Softmax(Softmax::new()),
        })
    }

    fn of<T: Scalar>(layer: &Layer<T>) -> Self {
        match layer {
            Layer::Dense(d) => LayerSpec::Dense {
                n_in: d.n_in(),
                n_out: d.n_out(),
            },
            Layer::Conv(c) => {
                let (kh, kw) = c.kernel_size();
                LayerSpec::Conv {
                    in_channels: c.in_channels(),
                    out_channels: c.out_channels(),
                    kernel: [kh, kw],
                }
            }
            Layer::MaxPool(_) => LayerSpec::Maxpool,
            Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate() },
            Layer::Flatten(_) => LayerSpec::Flatten,
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::Softmax(_) => LayerSpec::Softmax,
        }
    }
}

/// Ordered layer stack ending in a softmax over [`CLASSES`] outputs.
///
/// Training drives the stack up to the logits (everything before the final
/// softmax) and hands them to the fused loss; inference runs the full stack.
#[derive(Clone, Debug)]
pub struct SequentialModel<T> {
    layers: Vec<Layer<T>>,
    architecture: Architecture,
    input_dims: Vec<usize>,
    classes: usize,
    seed: u64,
    /// Completed training epochs; training resumes after this one.
    pub epochs_completed: usize,
}

impl<T: Scalar> SequentialModel<T> {
    /// Builds a model from layer specs, Glorot-initialized from `seed`.
    pub fn from_specs(
        architecture: Architecture,
        input_dims: &[usize],
        specs: &[LayerSpec],
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seed::rng(seed);
        let layers = specs
            .iter()
            .map(|s| s.instantiate(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        let model = SequentialModel {
            layers,
            architecture,
            input_dims: input_dims.to_vec(),
            classes: CLASSES,
            seed,
            epochs_completed: 0,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        match self.layers.last() {
            Some(Layer::Softmax(_)) => {}
            _ => return Err(Error::Config("model must end with a softmax layer".into())),
        }
        if self.layers[..self.layers.len() - 1]
            .iter()
            .any(|l| matches!(l, Layer::Softmax(_)))
        {
            return Err(Error::Config("softmax may only appear as the final layer".into()));
        }
        let out = self.layer_output_dims()?;
        let last = out.last().expect("at least one layer");
        if last.as_slice() != [self.classes] {
            return Err(Error::Shape(format!(
                "model produces {last:?} per sample, expected [{}]",
                self.classes
            )));
        }
        Ok(())
    }

    /// Per-sample output dims after each layer, checked for compatibility.
    pub fn layer_output_dims(&self) -> Result<Vec<Vec<usize>>> {
        let mut dims = self.input_dims.clone();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                dims = l
                    .output_dims(&dims)
                    .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", l.kind())))?;
                Ok(dims.clone())
            })
            .collect()
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(LayerSpec::of).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let dims = input.dims();
        if dims.len() != self.input_dims.len() + 1 || dims[1..] != self.input_dims[..] {
            return Err(Error::Shape(format!(
                "model expects N×{:?} input, got {}",
                self.input_dims,
                input.shape()
            )));
        }
        Ok(())
    }

    fn logit_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Runs every layer except the final softmax.
    pub fn forward_logits(&mut self, input: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        if ctx.mode == Mode::Eval {
            return self.infer_logits(input);
        }
        self.check_input(input)?;
        let n = self.logit_layers();
        let mut x = input.clone();
        for (i, layer) in self.layers[..n].iter_mut().enumerate() {
            x = layer.forward(&x, &ctx.for_layer(i))?;
        }
        Ok(x)
    }

    pub fn infer_logits(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers[..self.logit_layers()] {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Eval-mode class probabilities, `N × classes`.
    pub fn predict_proba(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let logits = self.infer_logits(input)?;
        self.layers[self.logit_layers()].infer(&logits)
    }

    /// Backpropagates a gradient on the logits through every layer below
    /// the softmax, filling parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.logit_layers();
        let mut g = grad_logits.clone();
        for layer in self.layers[..n].iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Branch decisions of the last train-mode forward, see
    /// [`Layer::branch_pattern`].
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut sink = Vec::new();
        for l in &self.layers {
            l.branch_pattern(&mut sink);
        }
        sink
    }

    pub fn cast<U: Scalar>(&self) -> Result<SequentialModel<U>> {
        let mut out = SequentialModel::<U>::from_specs(
            self.architecture,
            &self.input_dims,
            &self.layer_specs(),
            self.seed,
        )?;
        for (src, dst) in self.layers.iter().zip(out.layers.iter_mut()) {
            if let (Some(s), Some(d)) = (src.params(), dst.params_mut()) {
                for (sp, dp) in s.params().into_iter().zip(d.params_mut()) {
                    dp.value = sp.value.cast();
                    dp.acc_grad = sp.acc_grad.cast();
                    dp.acc_delta = sp.acc_delta.cast();
                }
            }
        }
        out.epochs_completed = self.epochs_completed;
        Ok(out)
    }
}

pub fn mlp_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Flatten,
        LayerSpec::Dense { n_in: 1024, n_out: 512 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.25 },
        LayerSpec::Dense { n_in: 512, n_out: 128 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.25 },
        LayerSpec::Dense { n_in: 128, n_out: 10 },
        LayerSpec::Softmax,
    ]
}

pub fn cnn_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv { in_channels: 1, out_channels: 30, kernel: [5, 5] },
        LayerSpec::Relu,
        LayerSpec::Maxpool,
        LayerSpec::Conv { in_channels: 30, out_channels: 15, kernel: [3, 3] },
        LayerSpec::Relu,
        LayerSpec::Maxpool,
        LayerSpec::Dropout { rate: 0.25 },
        LayerSpec::Flatten,
        LayerSpec::Dense { n_in: 540, n_out: 128 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { n_in: 128, n_out: 10 },
        LayerSpec::Softmax,
    ]
}

/// Fully connected network over the flattened 32×32 image:
/// 1024 → 512 → 128 → 10 with ReLU and 25% dropout after each hidden layer.
pub fn build_mlp<T: Scalar>(seed: u64) -> SequentialModel<T> {
    SequentialModel::from_specs(Architecture::Mlp, &INPUT_DIMS, &mlp_specs(), seed)
        .expect("reference MLP is well formed")
}

/// Convolutional network: 30@5×5 conv, pool, 15@3×3 conv, pool, 25%
/// dropout, flatten (540), dense 128, 50% dropout, dense 10.
pub fn build_cnn<T: Scalar>(seed: u64) -> SequentialModel<T> {
    SequentialModel::from_specs(Architecture::Cnn, &INPUT_DIMS, &cnn_specs(), seed)
        .expect("reference CNN is well formed")
}

pub fn build(architecture: Architecture, seed: u64) -> Result<SequentialModel<f32>> {
    match architecture {
        Architecture::Mlp => Ok(build_mlp(seed)),
        Architecture::Cnn => Ok(build_cnn(seed)),
        Architecture::Custom => Err(Error::Config("no builder for custom architectures".into())),
    }
}

/// Reduced CNN over 1×8×8 inputs with the same layer kinds as
/// [`build_cnn`]: 2@3×3 conv, pool, 3@2×2 conv, pool, dense 12, dense 10.
pub fn build_small_cnn<T: Scalar>(seed: u64, dropout: f64) -> Result<SequentialModel<T>> {
    let specs = vec![
        LayerSpec::Conv { in_channels: 1, out_channels: 2, kernel: [3, 3] },
        LayerSpec::Relu,
        LayerSpec::Maxpool,
        LayerSpec::Conv { in_channels: 2, out_channels: 3, kernel: [2, 2] },
        LayerSpec::Relu,
        LayerSpec::Maxpool,
        LayerSpec::Dropout { rate: dropout },
        LayerSpec::Flatten,
        LayerSpec::Dense { n_in: 3, n_out: 12 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: dropout },
        LayerSpec::Dense { n_in: 12, n_out: 10 },
        LayerSpec::Softmax,
    ];
    SequentialModel::from_specs(Architecture::Custom, &[1, 8, 8], &specs, seed)
}

/// Reduced MLP over 1×8×8 inputs: 64 → 12 → 10.
pub fn build_small_mlp<T: Scalar>(seed: u64, dropout: f64) -> Result<SequentialModel<T>> {
    let specs = vec![
        LayerSpec::Flatten,
        LayerSpec::Dense { n_in: 64, n_out: 12 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: dropout },
        LayerSpec::Dense { n_in: 12, n_out: 10 },
        LayerSpec::Softmax,
    ];
    SequentialModel::from_specs(Architecture::Custom, &[1, 8, 8], &specs, seed)
}
