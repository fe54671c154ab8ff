//! 1-D convolution and transposed-convolution kernels.
//!
//! Both directions are lowered onto a single GEMM through an `im2col`
//! buffer laid out as `[channels * kernel, batch * positions]`. Activations
//! are stored `[batch, channels, length]`.

use crate::error::{ensure, Result};

use super::real::lane_sum;
use super::Real;

/// Kernel size, stride and zero padding of a 1-D (transposed) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        ensure!(kernel >= 1, Geometry, "kernel must be >= 1, got {kernel}");
        ensure!(stride >= 1, Geometry, "stride must be >= 1, got {stride}");
        Ok(Self {
            kernel,
            stride,
            padding,
        })
    }

    /// `floor((len + 2p - k) / s) + 1`
    pub fn conv_out_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.padding;
        ensure!(
            padded >= self.kernel,
            Geometry,
            "padded length {padded} shorter than kernel {}",
            self.kernel
        );
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// `(len - 1) * s - 2p + k`
    pub fn deconv_out_len(&self, len: usize) -> Result<usize> {
        ensure!(len >= 1, Geometry, "empty input length");
        let grown = (len - 1) * self.stride + self.kernel;
        ensure!(
            grown > 2 * self.padding,
            Geometry,
            "transposed convolution of length {len} with {self:?} has no output"
        );
        Ok(grown - 2 * self.padding)
    }
}

/// Gathers sliding windows of `x` (`[batch, channels, len]`) into
/// `[channels * k, batch * out_len]`, zero outside the signal.
pub(crate) fn im2col<T: Real>(
    x: &[T],
    batch: usize,
    channels: usize,
    len: usize,
    g: ConvGeometry,
    out_len: usize,
) -> Vec<T> {
    let cols_n = batch * out_len;
    let mut cols = vec![T::zero(); channels * g.kernel * cols_n];
    for c in 0..channels {
        for j in 0..g.kernel {
            let (t0, t1, start) = tap_range(j, len, g, out_len);
            let row = &mut cols[(c * g.kernel + j) * cols_n..(c * g.kernel + j + 1) * cols_n];
            for b in 0..batch {
                let src = &x[(b * channels + c) * len + start..(b * channels + c + 1) * len];
                let dst = &mut row[b * out_len + t0..b * out_len + t1];
                for (d, &v) in dst.iter_mut().zip(src.iter().step_by(g.stride)) {
                    *d = v;
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `dst`.
pub(crate) fn col2im_add<T: Real>(
    cols: &[T],
    batch: usize,
    channels: usize,
    len: usize,
    g: ConvGeometry,
    out_len: usize,
    dst: &mut [T],
) {
    let cols_n = batch * out_len;
    for c in 0..channels {
        for j in 0..g.kernel {
            let (t0, t1, start) = tap_range(j, len, g, out_len);
            let row = &cols[(c * g.kernel + j) * cols_n..(c * g.kernel + j + 1) * cols_n];
            for b in 0..batch {
                let out = &mut dst[(b * channels + c) * len + start..(b * channels + c + 1) * len];
                let src = &row[b * out_len + t0..b * out_len + t1];
                for (o, &v) in out.iter_mut().step_by(g.stride).zip(src) {
                    *o += v;
                }
            }
        }
    }
}

/// Output positions `t0..t1` whose kernel tap `j` lands inside the input,
/// and the input index `start` read at `t0`.
fn tap_range(j: usize, len: usize, g: ConvGeometry, out_len: usize) -> (usize, usize, usize) {
    let (s, p) = (g.stride, g.padding);
    let t0 = p.saturating_sub(j).div_ceil(s);
    let t1 = if len + p > j { ((len + p - j - 1) / s + 1).min(out_len) } else { 0 };
    if t0 >= t1 {
        return (0, 0, 0);
    }
    (t0, t1, t0 * s + j - p)
}

/// `[batch, channels, len]` -> `[channels, batch * len]`
pub(crate) fn to_channel_major<T: Real>(x: &[T], batch: usize, channels: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let src = &x[(b * channels + c) * len..(b * channels + c + 1) * len];
            out[c * batch * len + b * len..c * batch * len + (b + 1) * len].copy_from_slice(src);
        }
    }
    out
}

/// `[channels, batch * len]` -> `[batch, channels, len]`
pub(crate) fn from_channel_major<T: Real>(x: &[T], batch: usize, channels: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &x[c * batch * len + b * len..c * batch * len + (b + 1) * len];
            out[(b * channels + c) * len..(b * channels + c + 1) * len].copy_from_slice(src);
        }
    }
    out
}

fn add_channel_bias<T: Real>(y: &mut [T], bias: &[T], batch: usize, channels: usize, len: usize) {
    for b in 0..batch {
        for (c, &bc) in bias.iter().enumerate().take(channels) {
            y[(b * channels + c) * len..(b * channels + c + 1) * len]
                .iter_mut()
                .for_each(|v| *v += bc);
        }
    }
}

fn channel_sums<T: Real>(dy: &[T], batch: usize, channels: usize, len: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); channels];
    for b in 0..batch {
        for (c, s) in sums.iter_mut().enumerate() {
            *s += lane_sum(&dy[(b * channels + c) * len..(b * channels + c + 1) * len]);
        }
    }
    sums
}

/// Shapes of a convolution-like call, fixed at forward time.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub in_len: usize,
    pub out_channels: usize,
    pub out_len: usize,
    pub geometry: ConvGeometry,
}

/// Cross-correlation forward. Returns the output and the im2col buffer.
pub(crate) fn conv1d_forward<T: Real>(x: &[T], w: &[T], bias: &[T], d: ConvDims) -> (Vec<T>, Vec<T>) {
    let k = d.geometry.kernel;
    let cols = im2col(x, d.batch, d.in_channels, d.in_len, d.geometry, d.out_len);
    let n = d.batch * d.out_len;
    let ck = d.in_channels * k;
    let mut ymat = vec![T::zero(); d.out_channels * n];
    T::gemm(
        d.out_channels,
        ck,
        n,
        T::one(),
        w,
        (ck as isize, 1),
        &cols,
        (n as isize, 1),
        T::zero(),
        &mut ymat,
        (n as isize, 1),
    );
    let mut y = from_channel_major(&ymat, d.batch, d.out_channels, d.out_len);
    add_channel_bias(&mut y, bias, d.batch, d.out_channels, d.out_len);
    (y, cols)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv1d_backward<T: Real>(
    dy: &[T],
    w: &[T],
    cols: &[T],
    d: ConvDims,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let k = d.geometry.kernel;
    let n = d.batch * d.out_len;
    let ck = d.in_channels * k;
    let dymat = to_channel_major(dy, d.batch, d.out_channels, d.out_len);
    let dw = need.1.then(|| {
        let mut dw = vec![T::zero(); d.out_channels * ck];
        T::gemm(
            d.out_channels,
            n,
            ck,
            T::one(),
            &dymat,
            (n as isize, 1),
            cols,
            (1, n as isize),
            T::zero(),
            &mut dw,
            (ck as isize, 1),
        );
        dw
    });
    let db = need.2.then(|| channel_sums(dy, d.batch, d.out_channels, d.out_len));
    let dx = need.0.then(|| {
        let mut dcols = vec![T::zero(); ck * n];
        T::gemm(
            ck,
            d.out_channels,
            n,
            T::one(),
            w,
            (1, ck as isize),
            &dymat,
            (n as isize, 1),
            T::zero(),
            &mut dcols,
            (n as isize, 1),
        );
        let mut dx = vec![T::zero(); d.batch * d.in_channels * d.in_len];
        col2im_add(&dcols, d.batch, d.in_channels, d.in_len, d.geometry, d.out_len, &mut dx);
        dx
    });
    ConvGrads { dx, dw, db }
}

/// Transposed convolution forward; weight is `[in_channels, out_channels, k]`.
/// Returns the output and the channel-major copy of `x` used for `dw`.
pub(crate) fn deconv1d_forward<T: Real>(x: &[T], w: &[T], bias: &[T], d: ConvDims) -> (Vec<T>, Vec<T>) {
    let k = d.geometry.kernel;
    let n = d.batch * d.in_len;
    let ok = d.out_channels * k;
    let xmat = to_channel_major(x, d.batch, d.in_channels, d.in_len);
    let mut cols = vec![T::zero(); ok * n];
    T::gemm(
        ok,
        d.in_channels,
        n,
        T::one(),
        w,
        (1, ok as isize),
        &xmat,
        (n as isize, 1),
        T::zero(),
        &mut cols,
        (n as isize, 1),
    );
    let mut y = vec![T::zero(); d.batch * d.out_channels * d.out_len];
    // The transposed convolution scatters like the adjoint of a convolution
    // from `out_len` down to `in_len`.
    col2im_add(&cols, d.batch, d.out_channels, d.out_len, d.geometry, d.in_len, &mut y);
    add_channel_bias(&mut y, bias, d.batch, d.out_channels, d.out_len);
    (y, xmat)
}

pub(crate) fn deconv1d_backward<T: Real>(
    dy: &[T],
    w: &[T],
    xmat: &[T],
    d: ConvDims,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let k = d.geometry.kernel;
    let n = d.batch * d.in_len;
    let ok = d.out_channels * k;
    let dcols = im2col(dy, d.batch, d.out_channels, d.out_len, d.geometry, d.in_len);
    let dx = need.0.then(|| {
        let mut dxmat = vec![T::zero(); d.in_channels * n];
        T::gemm(
            d.in_channels,
            ok,
            n,
            T::one(),
            w,
            (ok as isize, 1),
            &dcols,
            (n as isize, 1),
            T::zero(),
            &mut dxmat,
            (n as isize, 1),
        );
        from_channel_major(&dxmat, d.batch, d.in_channels, d.in_len)
    });
    let dw = need.1.then(|| {
        let mut dw = vec![T::zero(); d.in_channels * ok];
        T::gemm(
            d.in_channels,
            n,
            ok,
            T::one(),
            xmat,
            (n as isize, 1),
            &dcols,
            (1, n as isize),
            T::zero(),
            &mut dw,
            (ok as isize, 1),
        );
        dw
    });
    let db = need.2.then(|| channel_sums(dy, d.batch, d.out_channels, d.out_len));
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_lengths() {
        let g = ConvGeometry::new(4, 2, 1).unwrap();
        assert_eq!(g.conv_out_len(512).unwrap(), 256);
        assert_eq!(g.deconv_out_len(256).unwrap(), 512);
        let g1 = ConvGeometry::new(4, 1, 0).unwrap();
        assert_eq!(g1.deconv_out_len(1).unwrap(), 4);
        assert!(g1.conv_out_len(3).is_err());
        assert!(ConvGeometry::new(0, 1, 0).is_err());
        assert!(ConvGeometry::new(1, 0, 0).is_err());
        // (1 - 1) * 1 + 1 - 2 = -1
        assert!(ConvGeometry::new(1, 1, 1).unwrap().deconv_out_len(1).is_err());
    }

    #[test]
    fn channel_major_round_trip() {
        let x: Vec<f64> = (0..24).map(f64::from).collect();
        let cm = to_channel_major(&x, 2, 3, 4);
        assert_eq!(&cm[..8], &[0.0, 1.0, 2.0, 3.0, 12.0, 13.0, 14.0, 15.0]);
        assert_eq!(from_channel_major(&cm, 2, 3, 4), x);
    }
}
