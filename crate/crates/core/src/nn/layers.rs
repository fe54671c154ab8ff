//! Layer descriptions and a sequential network built from them.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};

use super::ops::{Activation, BatchNormStats, Mode, NormMode};
use super::{ConvGeometry, Parameterized, Real, Tape, Tensor, Var};

/// Static description of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Deconv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm1d {
        channels: usize,
    },
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Dropout {
        p: f64,
    },
    Flatten,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            }
            | LayerSpec::Deconv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                ensure!(in_channels > 0 && out_channels > 0, Geometry, "zero channels in {self:?}");
                ConvGeometry::new(kernel, stride, padding)?;
            }
            LayerSpec::BatchNorm1d { channels } => {
                ensure!(channels > 0, Geometry, "zero channels in {self:?}")
            }
            LayerSpec::FullyConnected { inputs, outputs } => {
                ensure!(inputs > 0 && outputs > 0, Geometry, "zero width in {self:?}")
            }
            LayerSpec::LeakyRelu { slope } => {
                ensure!(slope.is_finite(), Parameter, "non-finite slope {slope}")
            }
            LayerSpec::Dropout { p } => {
                ensure!((0.0..1.0).contains(&p), Parameter, "dropout probability {p} outside [0, 1)")
            }
            LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    fn geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerSpec::Conv1d {
                kernel,
                stride,
                padding,
                ..
            }
            | LayerSpec::Deconv1d {
                kernel,
                stride,
                padding,
                ..
            } => Some(ConvGeometry {
                kernel,
                stride,
                padding,
            }),
            _ => None,
        }
    }

    /// Per-sample output shape (batch dimension excluded).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let expect_cl = |channels: usize| -> Result<usize> {
            ensure!(
                input.len() == 2 && input[0] == channels,
                Dimension,
                "{self:?} expects ({channels}, L), got {input:?}"
            );
            Ok(input[1])
        };
        Ok(match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                ..
            } => {
                let len = expect_cl(in_channels)?;
                vec![out_channels, self.geometry().unwrap().conv_out_len(len)?]
            }
            LayerSpec::Deconv1d {
                in_channels,
                out_channels,
                ..
            } => {
                let len = expect_cl(in_channels)?;
                vec![out_channels, self.geometry().unwrap().deconv_out_len(len)?]
            }
            LayerSpec::BatchNorm1d { channels } => {
                expect_cl(channels)?;
                input.to_vec()
            }
            LayerSpec::FullyConnected { inputs, outputs } => {
                ensure!(
                    input == [inputs],
                    Dimension,
                    "{self:?} expects ({inputs}), got {input:?}"
                );
                vec![outputs]
            }
            LayerSpec::Flatten => vec![input.iter().product()],
            _ => input.to_vec(),
        })
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerSpec::Deconv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel + out_channels,
            LayerSpec::BatchNorm1d { channels } => 2 * channels,
            LayerSpec::FullyConnected { inputs, outputs } => inputs * outputs + outputs,
            _ => 0,
        }
    }
}

/// Weight initialisation: `N(0, std²)` weights, `N(1, std²)` batch-norm
/// scales, zero biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitScheme {
    pub std: f64,
}

impl Default for InitScheme {
    fn default() -> Self {
        Self { std: 0.02 }
    }
}

impl InitScheme {
    fn normal<T: Real, R: Rng + ?Sized>(&self, shape: &[usize], mean: f64, rng: &mut R) -> Tensor<T> {
        let dist = Normal::new(mean, self.std).expect("finite init std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
        Tensor::new(shape, data).expect("shape matches").with_grad()
    }
}

/// A layer with its parameters and buffers.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv1d {
        geometry: ConvGeometry,
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    Deconv1d {
        geometry: ConvGeometry,
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    BatchNorm1d {
        gamma: Tensor<T>,
        beta: Tensor<T>,
        stats: BatchNormStats<T>,
    },
    FullyConnected {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    Activation(Activation),
    Dropout(f64),
    Flatten,
}

/// Per-call switches shared by every layer of a forward pass.
pub struct ForwardCtx<'r, R: ?Sized> {
    pub mode: Mode,
    /// Fold batch moments into batch-norm running statistics.
    pub update_running: bool,
    /// Register parameters as differentiable leaves; otherwise they enter the
    /// tape as constants.
    pub track_params: bool,
    pub rng: &'r mut R,
}

impl<T: Real> Layer<T> {
    pub fn from_spec<R: Rng + ?Sized>(spec: &LayerSpec, init: InitScheme, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        Ok(match *spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Layer::Conv1d {
                geometry: spec.geometry().unwrap(),
                weight: init.normal(&[out_channels, in_channels, kernel], 0.0, rng),
                bias: Tensor::zeros(&[out_channels]).with_grad(),
            },
            LayerSpec::Deconv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Layer::Deconv1d {
                geometry: spec.geometry().unwrap(),
                weight: init.normal(&[in_channels, out_channels, kernel], 0.0, rng),
                bias: Tensor::zeros(&[out_channels]).with_grad(),
            },
            LayerSpec::BatchNorm1d { channels } => Layer::BatchNorm1d {
                gamma: init.normal(&[channels], 1.0, rng),
                beta: Tensor::zeros(&[channels]).with_grad(),
                stats: BatchNormStats::new(channels),
            },
            LayerSpec::FullyConnected { inputs, outputs } => Layer::FullyConnected {
                weight: init.normal(&[outputs, inputs], 0.0, rng),
                bias: Tensor::zeros(&[outputs]).with_grad(),
            },
            LayerSpec::Relu => Layer::Activation(Activation::Relu),
            LayerSpec::LeakyRelu { slope } => Layer::Activation(Activation::LeakyRelu(slope)),
            LayerSpec::Tanh => Layer::Activation(Activation::Tanh),
            LayerSpec::Dropout { p } => Layer::Dropout(p),
            LayerSpec::Flatten => Layer::Flatten,
        })
    }

    /// Trainable tensors with their local names.
    pub fn named_params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv1d { weight, bias, .. }
            | Layer::Deconv1d { weight, bias, .. }
            | Layer::FullyConnected { weight, bias } => vec![("weight", weight), ("bias", bias)],
            Layer::BatchNorm1d { gamma, beta, .. } => vec![("gamma", gamma), ("beta", beta)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv1d { weight, bias, .. }
            | Layer::Deconv1d { weight, bias, .. }
            | Layer::FullyConnected { weight, bias } => vec![weight, bias],
            Layer::BatchNorm1d { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }

    /// `params` are this layer's tape bindings, in [`Layer::named_params`]
    /// order.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        ctx: &mut ForwardCtx<'_, R>,
        params: &[Var],
    ) -> Result<Var> {
        match self {
            Layer::Conv1d { geometry, .. } => tape.conv1d(x, params[0], params[1], *geometry),
            Layer::Deconv1d { geometry, .. } => tape.deconv1d(x, params[0], params[1], *geometry),
            Layer::BatchNorm1d { stats, .. } => tape.batch_norm(
                x,
                params[0],
                params[1],
                stats,
                NormMode::for_mode(ctx.mode, ctx.update_running),
            ),
            Layer::FullyConnected { .. } => tape.linear(x, params[0], params[1]),
            Layer::Activation(kind) => tape.activation(x, *kind),
            Layer::Dropout(p) => tape.dropout(x, *p, ctx.mode, ctx.rng),
            Layer::Flatten => tape.flatten(x),
        }
    }
}

/// Output of [`Network::forward`].
pub struct NetOutput {
    pub output: Var,
    /// Output of every layer, in order.
    pub activations: Vec<Var>,
    /// Tape variables of the parameters, in [`Network::params`] order.
    pub bindings: Vec<Var>,
}

/// Layers applied in sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer<T>>,
    input_shape: Vec<usize>,
}

impl<T: Real> Network<T> {
    /// Builds the layers after checking that the shapes chain from
    /// `input_shape` (batch excluded).
    pub fn build<R: Rng + ?Sized>(
        specs: Vec<LayerSpec>,
        input_shape: &[usize],
        init: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        shape_table(&specs, input_shape)?;
        let layers = specs
            .iter()
            .map(|s| Layer::from_spec(s, init, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            specs,
            layers,
            input_shape: input_shape.to_vec(),
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// Parameters named `<layer index>.<name>`.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.named_params()
                    .into_iter()
                    .map(move |(n, t)| (format!("{i}.{n}"), t))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Batch-norm running statistics, keyed by layer index.
    pub fn norm_stats(&self) -> Vec<(usize, &BatchNormStats<T>)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::BatchNorm1d { stats, .. } => Some((i, stats)),
                _ => None,
            })
            .collect()
    }

    pub fn norm_stats_mut(&mut self) -> Vec<(usize, &mut BatchNormStats<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::BatchNorm1d { stats, .. } => Some((i, stats)),
                _ => None,
            })
            .collect()
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        ctx: &mut ForwardCtx<'_, R>,
    ) -> Result<NetOutput> {
        let bindings = self.bind(tape, ctx.track_params)?;
        self.forward_with(tape, x, ctx, &bindings)
    }

    /// Puts every parameter on the tape, as a differentiable leaf when
    /// `track` is set and as a constant otherwise.
    pub fn bind(&self, tape: &mut Tape<T>, track: bool) -> Result<Vec<Var>> {
        self.params()
            .into_iter()
            .map(|p| if track { tape.param(p) } else { tape.constant(p) })
            .collect()
    }

    /// Forward pass reusing bindings from [`Network::bind`], so several
    /// passes can share one set of parameter variables.
    pub fn forward_with<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        ctx: &mut ForwardCtx<'_, R>,
        bindings: &[Var],
    ) -> Result<NetOutput> {
        let shape = tape.shape(x);
        ensure!(
            shape.len() == self.input_shape.len() + 1 && shape[1..] == self.input_shape[..],
            Dimension,
            "network expects [B, {:?}], got {shape:?}",
            self.input_shape
        );
        let counts: Vec<usize> = self.layers.iter().map(|l| l.named_params().len()).collect();
        ensure!(
            bindings.len() == counts.iter().sum::<usize>(),
            Contract,
            "{} bindings for {} parameters",
            bindings.len(),
            counts.iter().sum::<usize>()
        );
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut h = x;
        let mut at = 0;
        for (layer, n) in self.layers.iter_mut().zip(counts) {
            h = layer.forward(tape, h, ctx, &bindings[at..at + n])?;
            at += n;
            activations.push(h);
        }
        Ok(NetOutput {
            output: h,
            activations,
            bindings: bindings.to_vec(),
        })
    }

    /// Adds the gradients of a finished backward pass into the parameters.
    pub fn absorb_grads(&mut self, grads: &super::Gradients<T>, bindings: &[Var]) -> Result<()> {
        let mut params = self.params_mut();
        ensure!(
            params.len() == bindings.len(),
            Contract,
            "{} bindings for {} parameters",
            bindings.len(),
            params.len()
        );
        for (p, &v) in params.iter_mut().zip(bindings) {
            grads.accumulate_into(v, p)?;
        }
        Ok(())
    }
}

/// Per-layer output shapes (batch excluded) starting from `input_shape`.
pub fn shape_table(specs: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shape = input_shape.to_vec();
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            shape = s
                .output_shape(&shape)
                .map_err(|e| Error::Geometry(format!("layer {i}: {e}")))?;
            Ok(shape.clone())
        })
        .collect()
}

impl<T: Real> Parameterized<T> for Network<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        Network::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Network::params_mut(self)
    }
}
