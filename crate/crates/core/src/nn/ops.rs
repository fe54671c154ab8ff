//! Differentiable operations recorded on a [`Tape`].

use rand::Rng;

use crate::error::{ensure, Result};

use super::conv::{self, ConvDims, ConvGeometry};
use super::tape::{scalar_grad, Backward, BackwardCtx, Tape, Var};
use super::{Real, Tensor};
use super::real::{lane_dot, lane_sq_dev, lane_sum};

/// Whether layers behave as during training (batch statistics, active
/// dropout) or inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu(slope) => {
                if x >= T::zero() {
                    x
                } else {
                    T::of(slope) * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::of(slope)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// Running mean/variance of a batch-norm layer plus its constants.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNormStats<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Batch-norm normalisation choice for one forward call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalise with batch moments; optionally fold them into the running
    /// statistics.
    Batch { update_running: bool },
    /// Normalise with the running statistics.
    Running,
}

impl NormMode {
    pub fn for_mode(mode: Mode, update_running: bool) -> Self {
        match mode {
            Mode::Train => NormMode::Batch { update_running },
            Mode::Eval => NormMode::Running,
        }
    }
}

fn dims3(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    ensure!(shape.len() == 3, Dimension, "{what} expects [B, C, L], got {shape:?}");
    Ok((shape[0], shape[1], shape[2]))
}

struct ConvRule<T> {
    dims: ConvDims,
    saved: Vec<T>,
    transposed: bool,
}

impl<T: Real> Backward<T> for ConvRule<T> {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        let need = (ctx.needs[0], ctx.needs[1], ctx.needs[2]);
        let w = ctx.inputs[1].data();
        let g = if self.transposed {
            conv::deconv1d_backward(ctx.grad, w, &self.saved, self.dims, need)
        } else {
            conv::conv1d_backward(ctx.grad, w, &self.saved, self.dims, need)
        };
        Ok(vec![g.dx, g.dw, g.db])
    }
}

struct BatchNormRule<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
    dims: (usize, usize, usize),
}

impl<T: Real> Backward<T> for BatchNormRule<T> {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        let (b, c, l) = self.dims;
        let gamma = ctx.inputs[1].data();
        let dy = ctx.grad;
        let n = T::of((b * l) as f64);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * l;
                dgamma[ci] += lane_dot(&dy[off..off + l], &self.xhat[off..off + l]);
                dbeta[ci] += lane_sum(&dy[off..off + l]);
            }
        }
        let dx = ctx.needs[0].then(|| {
            let mut dx = vec![T::zero(); dy.len()];
            for ci in 0..c {
                let scale = gamma[ci] * self.inv_std[ci];
                // With batch statistics the mean and variance depend on x.
                let (sum_dy, sum_dy_xhat) = if self.batch_stats {
                    (dbeta[ci], dgamma[ci])
                } else {
                    (T::zero(), T::zero())
                };
                let (mean_dy, mean_dy_xhat) = (sum_dy / n, sum_dy_xhat / n);
                for bi in 0..b {
                    let off = (bi * c + ci) * l;
                    for i in off..off + l {
                        dx[i] = scale * (dy[i] - mean_dy - self.xhat[i] * mean_dy_xhat);
                    }
                }
            }
            dx
        });
        Ok(vec![
            dx,
            ctx.needs[1].then_some(dgamma),
            ctx.needs[2].then_some(dbeta),
        ])
    }
}

struct ActivationRule(Activation);

impl<T: Real> Backward<T> for ActivationRule {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        let x = ctx.inputs[0].data();
        let y = ctx.output.data();
        let dx = ctx
            .grad
            .iter()
            .zip(x.iter().zip(y))
            .map(|(&g, (&x, &y))| g * self.0.derivative(x, y))
            .collect();
        Ok(vec![Some(dx)])
    }
}

struct MaskRule<T>(Vec<T>);

impl<T: Real> Backward<T> for MaskRule<T> {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(
            ctx.grad.iter().zip(&self.0).map(|(&g, &m)| g * m).collect(),
        )])
    }
}

struct LinearRule {
    batch: usize,
    inputs: usize,
    outputs: usize,
}

impl<T: Real> Backward<T> for LinearRule {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        let (b, n, m) = (self.batch, self.inputs, self.outputs);
        let x = ctx.inputs[0].data();
        let w = ctx.inputs[1].data();
        let dy = ctx.grad;
        let dx = ctx.needs[0].then(|| {
            let mut dx = vec![T::zero(); b * n];
            T::gemm(b, m, n, T::one(), dy, (m as isize, 1), w, (n as isize, 1), T::zero(), &mut dx, (n as isize, 1));
            dx
        });
        let dw = ctx.needs[1].then(|| {
            let mut dw = vec![T::zero(); m * n];
            T::gemm(m, b, n, T::one(), dy, (1, m as isize), x, (n as isize, 1), T::zero(), &mut dw, (n as isize, 1));
            dw
        });
        let db = ctx.needs[2].then(|| {
            let mut db = vec![T::zero(); m];
            for row in dy.chunks(m) {
                db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
            }
            db
        });
        Ok(vec![dx, dw, db])
    }
}

struct PassThrough;

impl<T: Real> Backward<T> for PassThrough {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        Ok(vec![Some(ctx.grad.to_vec())])
    }
}

struct SumRule;

impl<T: Real> Backward<T> for SumRule {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        let g = scalar_grad(&ctx)?;
        Ok(vec![Some(vec![g; ctx.inputs[0].numel()])])
    }
}

struct DotRule;

impl<T: Real> Backward<T> for DotRule {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        let g = scalar_grad(&ctx)?;
        let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        Ok(vec![
            ctx.needs[0].then(|| b.iter().map(|&v| g * v).collect()),
            ctx.needs[1].then(|| a.iter().map(|&v| g * v).collect()),
        ])
    }
}

struct WeightedSumRule<T>(Vec<T>);

impl<T: Real> Backward<T> for WeightedSumRule<T> {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        Ok(self
            .0
            .iter()
            .zip(&ctx.needs)
            .map(|(&w, &need)| need.then(|| ctx.grad.iter().map(|&g| g * w).collect()))
            .collect())
    }
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `x` `[B, Cin, L]` with `weight` `[Cout, Cin, k]`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, geometry: ConvGeometry) -> Result<Var> {
        let (batch, in_channels, in_len) = dims3(self.shape(x), "conv1d input")?;
        let wshape = self.shape(weight).to_vec();
        ensure!(
            wshape.len() == 3 && wshape[1] == in_channels && wshape[2] == geometry.kernel,
            Dimension,
            "conv1d weight {wshape:?} incompatible with {in_channels} input channels and kernel {}",
            geometry.kernel
        );
        let out_channels = wshape[0];
        ensure!(
            self.shape(bias) == [out_channels],
            Dimension,
            "conv1d bias {:?} for {out_channels} output channels",
            self.shape(bias)
        );
        let out_len = geometry.conv_out_len(in_len)?;
        let dims = ConvDims {
            batch,
            in_channels,
            in_len,
            out_channels,
            out_len,
            geometry,
        };
        let (y, cols) = conv::conv1d_forward(
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            dims,
        );
        let value = Tensor::new(&[batch, out_channels, out_len], y)?;
        self.record(
            value,
            &[x, weight, bias],
            Box::new(ConvRule {
                dims,
                saved: cols,
                transposed: false,
            }),
        )
    }

    /// Transposed convolution of `x` `[B, Cin, L]` with `weight` `[Cin, Cout, k]`.
    pub fn deconv1d(&mut self, x: Var, weight: Var, bias: Var, geometry: ConvGeometry) -> Result<Var> {
        let (batch, in_channels, in_len) = dims3(self.shape(x), "deconv1d input")?;
        let wshape = self.shape(weight).to_vec();
        ensure!(
            wshape.len() == 3 && wshape[0] == in_channels && wshape[2] == geometry.kernel,
            Dimension,
            "deconv1d weight {wshape:?} incompatible with {in_channels} input channels and kernel {}",
            geometry.kernel
        );
        let out_channels = wshape[1];
        ensure!(
            self.shape(bias) == [out_channels],
            Dimension,
            "deconv1d bias {:?} for {out_channels} output channels",
            self.shape(bias)
        );
        let out_len = geometry.deconv_out_len(in_len)?;
        let dims = ConvDims {
            batch,
            in_channels,
            in_len,
            out_channels,
            out_len,
            geometry,
        };
        let (y, xmat) = conv::deconv1d_forward(
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            dims,
        );
        let value = Tensor::new(&[batch, out_channels, out_len], y)?;
        self.record(
            value,
            &[x, weight, bias],
            Box::new(ConvRule {
                dims,
                saved: xmat,
                transposed: true,
            }),
        )
    }

    /// Per-channel normalisation over batch and length of `[B, C, L]`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        mode: NormMode,
    ) -> Result<Var> {
        let (b, c, l) = dims3(self.shape(x), "batch_norm input")?;
        ensure!(
            self.shape(gamma) == [c] && self.shape(beta) == [c] && stats.channels() == c,
            Dimension,
            "batch_norm parameters do not match {c} channels"
        );
        let n = b * l;
        let eps = T::of(stats.eps);
        let xs = self.value(x).data();
        let (mean, var, batch_stats) = match mode {
            NormMode::Batch { update_running } => {
                ensure!(
                    n >= 2,
                    DegenerateBatch,
                    "batch norm needs at least 2 values per channel, got {n}"
                );
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let nt = T::of(n as f64);
                for ci in 0..c {
                    let mut s = T::zero();
                    for bi in 0..b {
                        let off = (bi * c + ci) * l;
                        s += lane_sum(&xs[off..off + l]);
                    }
                    let m = s / nt;
                    let mut ss = T::zero();
                    for bi in 0..b {
                        let off = (bi * c + ci) * l;
                        ss += lane_sq_dev(&xs[off..off + l], m);
                    }
                    mean[ci] = m;
                    var[ci] = ss / nt;
                }
                if update_running {
                    let mom = T::of(stats.momentum);
                    let unbias = T::of(n as f64 / (n as f64 - 1.0));
                    for ci in 0..c {
                        stats.running_mean[ci] = (T::one() - mom) * stats.running_mean[ci] + mom * mean[ci];
                        stats.running_var[ci] =
                            (T::one() - mom) * stats.running_var[ci] + mom * var[ci] * unbias;
                    }
                }
                (mean, var, true)
            }
            NormMode::Running => (stats.running_mean.clone(), stats.running_var.clone(), false),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut y = vec![T::zero(); xs.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * l;
                for i in off..off + l {
                    xhat[i] = (xs[i] - mean[ci]) * inv_std[ci];
                    y[i] = g[ci] * xhat[i] + be[ci];
                }
            }
        }
        let value = Tensor::new(&[b, c, l], y)?;
        self.record(
            value,
            &[x, gamma, beta],
            Box::new(BatchNormRule {
                xhat,
                inv_std,
                batch_stats,
                dims: (b, c, l),
            }),
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let v = self.value(x);
        let y: Vec<T> = v.data().iter().map(|&e| kind.apply(e)).collect();
        let value = Tensor::new(v.shape(), y)?;
        self.record(value, &[x], Box::new(ActivationRule(kind)))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)` so that eval
    /// mode is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        ensure!((0.0..1.0).contains(&p), Parameter, "dropout probability {p} outside [0, 1)");
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let v = self.value(x);
        // A unit is dropped when a uniform u32 falls below p * 2^32.
        let threshold = (p * 4_294_967_296.0) as u64;
        let mut bits = vec![0u32; v.numel()];
        rng.fill(&mut bits[..]);
        let mask: Vec<T> = bits
            .iter()
            .map(|&r| if u64::from(r) < threshold { T::zero() } else { keep })
            .collect();
        let y = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(v.shape(), y)?;
        self.record(value, &[x], Box::new(MaskRule(mask)))
    }

    /// Affine map of `x` `[B, N]` with `weight` `[M, N]` and `bias` `[M]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        ensure!(xs.len() == 2, Dimension, "linear input must be [B, N], got {xs:?}");
        ensure!(
            ws.len() == 2 && ws[1] == xs[1],
            Dimension,
            "linear weight {ws:?} incompatible with input {xs:?}"
        );
        let (b, n, m) = (xs[0], xs[1], ws[0]);
        ensure!(self.shape(bias) == [m], Dimension, "linear bias {:?} for {m} outputs", self.shape(bias));
        let mut y = vec![T::zero(); b * m];
        for row in y.chunks_mut(m) {
            row.copy_from_slice(self.value(bias).data());
        }
        T::gemm(
            b,
            n,
            m,
            T::one(),
            self.value(x).data(),
            (n as isize, 1),
            self.value(weight).data(),
            (1, n as isize),
            T::one(),
            &mut y,
            (m as isize, 1),
        );
        let value = Tensor::new(&[b, m], y)?;
        self.record(
            value,
            &[x, weight, bias],
            Box::new(LinearRule {
                batch: b,
                inputs: n,
                outputs: m,
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.record(value, &[x], Box::new(PassThrough))
    }

    /// `[B, ...]` -> `[B, rest]`
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let b = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(x, &[b, rest])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.record(Tensor::scalar(s), &[x], Box::new(SumRule))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.value(a).dot(self.value(b))?;
        self.record(Tensor::scalar(s), &[a, b], Box::new(DotRule))
    }

    /// `sum_i w_i * x_i` over same-shaped operands.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        ensure!(!terms.is_empty(), Empty, "weighted sum of no terms");
        let shape = self.shape(terms[0].0).to_vec();
        let mut out = vec![T::zero(); self.value(terms[0].0).numel()];
        for &(v, w) in terms {
            ensure!(
                self.shape(v) == shape.as_slice(),
                Dimension,
                "weighted sum operands {:?} and {shape:?}",
                self.shape(v)
            );
            out.iter_mut().zip(self.value(v).data()).for_each(|(o, &x)| *o += w * x);
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let weights = terms.iter().map(|t| t.1).collect();
        self.record(Tensor::new(&shape, out)?, &vars, Box::new(WeightedSumRule(weights)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.weighted_sum(&[(a, T::one()), (b, T::one())])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.weighted_sum(&[(x, factor)])
    }
}
