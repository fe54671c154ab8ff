//! Generator and discriminator/classifier networks.
//!
//! The generator lifts a latent vector `[B, latent, 1]` to a `[B, 1, 512]`
//! spectrum through eight transposed convolutions. The discriminator halves
//! the length and grows the channels through seven convolution blocks, then
//! maps the flattened `512 x 4` features to `K + 1` logits, the last of which
//! scores "generated".

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::nn::{
    shape_table, ForwardCtx, InitScheme, LayerSpec, Mode, Network, Parameterized, Real, Tape, Tensor, Var,
};
use crate::synth::SIGNAL_LEN;

pub const LATENT_DIM: usize = 100;
pub const NUM_CLASSES: usize = 3;
/// Number of discriminator feature layers available for feature matching.
pub const TAP_COUNT: usize = 7;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const DROPOUT_P: f64 = 0.5;

/// Layer table of the generator for the given latent width.
pub fn generator_specs(latent_dim: usize) -> Vec<LayerSpec> {
    let mut specs = vec![
        LayerSpec::Deconv1d {
            in_channels: latent_dim,
            out_channels: 512,
            kernel: 4,
            stride: 1,
            padding: 0,
        },
        LayerSpec::BatchNorm1d { channels: 512 },
        LayerSpec::Relu,
    ];
    let mut ch = 512;
    for _ in 0..6 {
        specs.extend([
            LayerSpec::Deconv1d {
                in_channels: ch,
                out_channels: ch / 2,
                kernel: 4,
                stride: 2,
                padding: 1,
            },
            LayerSpec::BatchNorm1d { channels: ch / 2 },
            LayerSpec::Relu,
        ]);
        ch /= 2;
    }
    specs.extend([
        LayerSpec::Deconv1d {
            in_channels: ch,
            out_channels: 1,
            kernel: 4,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Tanh,
    ]);
    specs
}

/// Layer table of the discriminator for `num_classes` real classes.
pub fn discriminator_specs(num_classes: usize, dropout: f64) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut ch_in = 1;
    let mut ch_out = 8;
    for _ in 0..TAP_COUNT {
        specs.extend([
            LayerSpec::Conv1d {
                in_channels: ch_in,
                out_channels: ch_out,
                kernel: 4,
                stride: 2,
                padding: 1,
            },
            LayerSpec::BatchNorm1d { channels: ch_out },
            LayerSpec::LeakyRelu { slope: LEAKY_SLOPE },
            LayerSpec::Dropout { p: dropout },
        ]);
        ch_in = ch_out;
        ch_out *= 2;
    }
    let flat = ch_in * (SIGNAL_LEN >> TAP_COUNT);
    specs.extend([
        LayerSpec::Flatten,
        LayerSpec::FullyConnected {
            inputs: flat,
            outputs: num_classes + 1,
        },
    ]);
    specs
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    latent_dim: usize,
    net: Network<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(latent_dim: usize, seed: u64) -> Result<Self> {
        ensure!(latent_dim >= 1, Parameter, "latent dimension must be positive");
        let net = Network::build(
            generator_specs(latent_dim),
            &[latent_dim, 1],
            InitScheme::default(),
            &mut seeded(seed),
        )?;
        Ok(Self { latent_dim, net })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    /// Latent batch `[B, latent, 1]` drawn from a standard normal.
    pub fn sample_latent<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Tensor<T> {
        let n = batch * self.latent_dim;
        let data = (0..n)
            .map(|_| T::of(rng.sample::<f64, _>(rand_distr::StandardNormal)))
            .collect();
        Tensor::new(&[batch, self.latent_dim, 1], data).expect("latent shape")
    }

    /// Returns the `[B, 1, 512]` output and the parameter bindings.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        z: Var,
        ctx: &mut ForwardCtx<'_, R>,
    ) -> Result<(Var, Vec<Var>)> {
        let bindings = self.net.bind(tape, ctx.track_params)?;
        self.forward_with(tape, z, ctx, &bindings)
    }

    /// Forward pass with parameters already bound by [`Network::bind`].
    pub fn forward_with<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        z: Var,
        ctx: &mut ForwardCtx<'_, R>,
        bindings: &[Var],
    ) -> Result<(Var, Vec<Var>)> {
        if ctx.mode == Mode::Train {
            ensure!(
                tape.shape(z).first().copied().unwrap_or(0) >= 2,
                DegenerateBatch,
                "generator training needs batch >= 2"
            );
        }
        let out = self.net.forward_with(tape, z, ctx, bindings)?;
        Ok((out.output, out.bindings))
    }

    /// Eval-mode sample of `[B, 1, 512]` signals.
    pub fn generate(&mut self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let zv = tape.input(z.clone())?;
        let mut rng = seeded(0);
        let mut ctx = ForwardCtx {
            mode: Mode::Eval,
            update_running: false,
            track_params: false,
            rng: &mut rng,
        };
        let (out, _) = self.forward(&mut tape, zv, &mut ctx)?;
        Ok(tape.value(out).clone())
    }
}

impl<T: Real> Parameterized<T> for Generator<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.params_mut()
    }
}

/// Discriminator activation at one feature layer (after LeakyReLU, before
/// dropout).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureTap {
    /// Feature layer index, 1-based.
    pub layer: usize,
    pub channels: usize,
    pub length: usize,
    pub var: Var,
}

pub struct DiscOutput {
    /// `[B, K + 1]`
    pub logits: Var,
    pub taps: Vec<FeatureTap>,
    pub bindings: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    num_classes: usize,
    net: Network<T>,
    tap_layers: Vec<usize>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(num_classes: usize, seed: u64) -> Result<Self> {
        Self::with_dropout(num_classes, DROPOUT_P, seed)
    }

    pub fn with_dropout(num_classes: usize, dropout: f64, seed: u64) -> Result<Self> {
        ensure!(num_classes >= 2, Parameter, "need at least 2 classes, got {num_classes}");
        let specs = discriminator_specs(num_classes, dropout);
        let tap_layers = specs
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, LayerSpec::LeakyRelu { .. }))
            .map(|(i, _)| i)
            .collect();
        let net = Network::build(specs, &[1, SIGNAL_LEN], InitScheme::default(), &mut seeded(seed))?;
        Ok(Self {
            num_classes,
            net,
            tap_layers,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Index of the "generated" logit.
    pub fn fake_index(&self) -> usize {
        self.num_classes
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    /// `(channels, length)` of each feature tap.
    pub fn tap_shapes(&self) -> Vec<(usize, usize)> {
        let table = shape_table(self.net.specs(), self.net.input_shape()).expect("validated at build");
        self.tap_layers.iter().map(|&i| (table[i][0], table[i][1])).collect()
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        ctx: &mut ForwardCtx<'_, R>,
    ) -> Result<DiscOutput> {
        let bindings = self.net.bind(tape, ctx.track_params)?;
        self.forward_with(tape, x, ctx, &bindings)
    }

    /// Forward pass with parameters already bound by [`Network::bind`]; the
    /// discriminator update runs three passes over one set of bindings.
    pub fn forward_with<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        x: Var,
        ctx: &mut ForwardCtx<'_, R>,
        bindings: &[Var],
    ) -> Result<DiscOutput> {
        if ctx.mode == Mode::Train {
            ensure!(
                tape.shape(x).first().copied().unwrap_or(0) >= 2,
                DegenerateBatch,
                "discriminator training needs batch >= 2"
            );
        }
        let out = self.net.forward_with(tape, x, ctx, bindings)?;
        let taps = self
            .tap_layers
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let var = out.activations[i];
                let shape = tape.shape(var);
                FeatureTap {
                    layer: k + 1,
                    channels: shape[1],
                    length: shape[2],
                    var,
                }
            })
            .collect();
        Ok(DiscOutput {
            logits: out.output,
            taps,
            bindings: out.bindings,
        })
    }

    /// Eval-mode logits `[B, K + 1]`, computed in chunks.
    pub fn logits(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        const CHUNK: usize = 256;
        let shape = x.shape().to_vec();
        ensure!(shape.len() == 3, Dimension, "discriminator input must be [B, 1, L], got {shape:?}");
        let per = shape[1] * shape[2];
        let width = self.num_classes + 1;
        let mut out = Vec::with_capacity(shape[0] * width);
        let mut rng = seeded(0);
        for chunk in x.data().chunks(CHUNK * per) {
            let b = chunk.len() / per;
            let mut tape = Tape::new();
            let xv = tape.input(Tensor::new(&[b, shape[1], shape[2]], chunk.to_vec())?)?;
            let mut ctx = ForwardCtx {
                mode: Mode::Eval,
                update_running: false,
                track_params: false,
                rng: &mut rng,
            };
            let o = self.forward(&mut tape, xv, &mut ctx)?;
            out.extend_from_slice(tape.value(o.logits).data());
        }
        Tensor::new(&[shape[0], width], out)
    }

    /// Predicted real class of every sample (fake logit excluded).
    pub fn classify(&mut self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        let width = self.num_classes + 1;
        Ok(logits
            .data()
            .chunks(width)
            .map(|row| classify_logits(row, self.num_classes))
            .collect())
    }
}

impl<T: Real> Parameterized<T> for Discriminator<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.params_mut()
    }
}

/// Argmax over the first `num_classes` logits; ties go to the lowest index.
pub fn classify_logits<T: Real>(row: &[T], num_classes: usize) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().take(num_classes).skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_excludes_fake_logit() {
        assert_eq!(classify_logits(&[9.0f64, 1.0, 1.0, 99.0], 3), 0);
        assert_eq!(classify_logits(&[1.0f64, 1.0, 1.0, 0.0], 3), 0);
        assert_eq!(classify_logits(&[0.0f64, 5.0, 2.0, 0.0], 3), 1);
    }

    #[test]
    fn generator_first_layer_shape() {
        let g = Generator::<f32>::new(LATENT_DIM, 0).unwrap();
        assert_eq!(g.network().params()[0].shape(), &[100, 512, 4]);
    }

    #[test]
    fn logit_width_and_flatten() {
        let d = Discriminator::<f32>::new(3, 0).unwrap();
        let table = shape_table(d.network().specs(), &[1, SIGNAL_LEN]).unwrap();
        let n = table.len();
        assert_eq!(table[n - 2], vec![2048]);
        assert_eq!(table[n - 1], vec![4]);
        assert_eq!(d.fake_index(), 3);
        assert!(Discriminator::<f32>::new(1, 0).is_err());
    }
}
