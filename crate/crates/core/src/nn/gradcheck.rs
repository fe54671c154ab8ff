//! Central finite-difference verification of tape gradients (64-bit).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};

use super::{Tape, Tensor, Var};

/// Anything exposing an ordered list of trainable tensors.
pub trait Parameterized<T> {
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
}

impl<T> Parameterized<T> for Vec<Tensor<T>> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.iter_mut().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Perturbation `h` in `(f(x + h) - f(x - h)) / 2h`.
    pub step: f64,
    /// Relative error above which a coordinate is flagged.
    pub tolerance: f64,
    /// Above this many coordinates a uniform random subsample is checked.
    pub max_coords: usize,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is zero are compared absolutely.
    pub abs_floor: f64,
    /// When subsampling, also check this many coordinates of every tensor so
    /// small tensors are not missed.
    pub min_per_tensor: usize,
    /// Re-estimate a failing coordinate with step `h / 2`. It passes if the
    /// extrapolated estimate matches; otherwise, if the two numeric
    /// estimates disagree with each other, the loss is not smooth at that
    /// scale (an activation kink was crossed) and the coordinate is counted
    /// in `kinks` instead of `failures`.
    pub kink_guard: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-4,
            max_coords: 1000,
            abs_floor: 1e-5,
            min_per_tensor: 0,
            kink_guard: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinates whose relative error exceeds the tolerance.
    pub failures: Vec<CoordCheck>,
    /// Coordinates excluded because the finite differences straddle a
    /// non-differentiable point.
    pub kinks: Vec<CoordCheck>,
}

impl GradCheckReport {
    /// No failures, and at most 1% of the checked coordinates excluded as
    /// kinks.
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.kinks.len() * 100 <= self.checked
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of `loss` against central differences.
///
/// `loss` must build the full computation on the fresh tape it is given and
/// return the scalar loss together with the tape variables bound to
/// `model.params()`, in order. It is called once for the analytic pass and
/// twice per checked coordinate, so it must be deterministic (freeze any
/// dropout seed inside the closure).
pub fn grad_check<M, F>(model: &mut M, mut loss: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    F: FnMut(&mut M, &mut Tape<f64>) -> Result<(Var, Vec<Var>)>,
{
    let mut tape = Tape::new();
    let (out, bindings) = loss(model, &mut tape)?;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
    ensure!(
        bindings.len() == sizes.len(),
        Contract,
        "loss bound {} variables for {} parameters",
        bindings.len(),
        sizes.len()
    );
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = bindings
        .iter()
        .zip(&sizes)
        .map(|(&v, &n)| grads.get(v).map_or_else(|| vec![0.0; n], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let total: usize = sizes.iter().sum();
    let coords: Vec<usize> = if total > cfg.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked = sample(&mut rng, total, cfg.max_coords).into_vec();
        let mut offset = 0;
        for &n in &sizes {
            let k = cfg.min_per_tensor.min(n);
            picked.extend(sample(&mut rng, n, k).into_iter().map(|i| offset + i));
            offset += n;
        }
        picked.sort_unstable();
        picked.dedup();
        picked
    } else {
        (0..total).collect()
    };

    let mut eval = |model: &mut M| -> Result<f64> {
        let mut tape = Tape::new();
        let (out, _) = loss(model, &mut tape)?;
        Ok(tape.value(out).data()[0])
    };

    let mut report = GradCheckReport::default();
    for flat in coords {
        let (mut param, mut index) = (0, flat);
        while index >= sizes[param] {
            index -= sizes[param];
            param += 1;
        }
        let mut central = |model: &mut M, h: f64| -> Result<f64> {
            let original = model.params()[param].data()[index];
            model.params_mut()[param].data_mut()[index] = original + h;
            let plus = eval(model)?;
            model.params_mut()[param].data_mut()[index] = original - h;
            let minus = eval(model)?;
            model.params_mut()[param].data_mut()[index] = original;
            Ok((plus - minus) / (2.0 * h))
        };
        let numeric = central(model, cfg.step)?;
        let a = analytic[param][index];
        let rel = relative_error(a, numeric, cfg.abs_floor);
        report.checked += 1;
        let coord = CoordCheck {
            param,
            index,
            analytic: a,
            numeric,
            rel_error: rel,
        };
        if rel <= cfg.tolerance {
            report.max_rel_error = report.max_rel_error.max(rel);
            continue;
        }
        if cfg.kink_guard {
            let half = central(model, cfg.step / 2.0)?;
            // Richardson extrapolation cancels the h^2 truncation term, which
            // dominates where the loss is strongly curved.
            let extrapolated = (4.0 * half - numeric) / 3.0;
            let rel_x = relative_error(a, extrapolated, cfg.abs_floor);
            if rel_x <= cfg.tolerance {
                report.max_rel_error = report.max_rel_error.max(rel_x);
                continue;
            }
            if relative_error(numeric, half, cfg.abs_floor) > cfg.tolerance {
                report.kinks.push(coord);
                continue;
            }
        }
        report.max_rel_error = report.max_rel_error.max(rel);
        report.failures.push(coord);
    }
    Ok(report)
}
