//! Discriminator and generator objectives of the semi-supervised GAN.
//!
//! Logits are `[B, K + 1]` with the last column scoring "generated". All
//! probabilities are handled in log space through log-sum-exp; nothing takes
//! the log of a materialised softmax.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};
use crate::models::{FeatureTap, TAP_COUNT};
use crate::nn::{Backward, BackwardCtx, Real, Tape, Tensor, Var};

pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// `ln(1 + e^x)` without overflow or cancellation.
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

fn logit_rows<'a, T: Real>(t: &'a Tensor<T>, what: &str) -> Result<(usize, usize, std::slice::Chunks<'a, T>)> {
    let s = t.shape();
    ensure!(
        s.len() == 2 && s[1] >= 2,
        Dimension,
        "{what} logits must be [B, K + 1] with K >= 1, got {s:?}"
    );
    Ok((s[0], s[1], t.data().chunks(s[1])))
}

/// `p(y = K + 1 | x)` per row, i.e. `1 - D(x)`.
pub fn fake_probability<T: Real>(logits: &Tensor<T>) -> Result<Vec<T>> {
    let (_, width, rows) = logit_rows(logits, "fake_probability")?;
    Ok(rows
        .map(|row| (row[width - 1] - log_sum_exp(row)).exp())
        .collect())
}

/// Which generator adversarial objective to minimise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AdversarialForm {
    /// `-E log D(G(z))`
    #[default]
    NonSaturating,
    /// `E log(1 - D(G(z)))`
    Saturating,
}

impl FromStr for AdversarialForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non-saturating" | "nonsaturating" => Ok(Self::NonSaturating),
            "saturating" => Ok(Self::Saturating),
            other => Err(Error::Config(format!("unknown adversarial form {other:?}"))),
        }
    }
}

impl fmt::Display for AdversarialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NonSaturating => "non-saturating",
            Self::Saturating => "saturating",
        })
    }
}

/// Per-row gradient of a mean over rows, stored as `[B, K + 1]`.
struct RowGradRule<T> {
    /// One entry per input: the gradient of the loss (before scaling by the
    /// upstream gradient).
    local: Vec<Vec<T>>,
}

impl<T: Real> Backward<T> for RowGradRule<T> {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        let g = ctx.grad[0];
        Ok(self
            .local
            .iter()
            .zip(&ctx.needs)
            .map(|(l, &need)| need.then(|| l.iter().map(|&v| v * g).collect()))
            .collect())
    }
}

/// `-mean log p(y | x, y <= K)`: cross-entropy over the first `K` logits,
/// renormalised without the fake logit.
pub fn supervised_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (batch, width, rows) = logit_rows(tape.value(logits), "supervised")?;
    let k = width - 1;
    ensure!(
        labels.len() == batch,
        Dimension,
        "{} labels for a batch of {batch}",
        labels.len()
    );
    ensure!(batch > 0, Empty, "empty labeled batch");
    let inv_b = T::one() / T::of(batch as f64);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); batch * width];
    for (i, (row, &y)) in rows.zip(labels).enumerate() {
        ensure!(y < k, Label, "label {y} outside 0..{k}");
        let real = &row[..k];
        let lse = log_sum_exp(real);
        total += lse - real[y];
        let q = softmax(real);
        for j in 0..k {
            grad[i * width + j] = q[j] * inv_b;
        }
        grad[i * width + y] -= inv_b;
    }
    let value = Tensor::scalar(total * inv_b);
    tape.record(value, &[logits], Box::new(RowGradRule { local: vec![grad] }))
}

/// `-mean_U log(1 - p_fake) - mean_G log p_fake`.
pub fn unsupervised_loss<T: Real>(tape: &mut Tape<T>, logits_unlabeled: Var, logits_fake: Var) -> Result<Var> {
    let (bu, wu, rows_u) = logit_rows(tape.value(logits_unlabeled), "unlabeled")?;
    let (bg, wg, rows_g) = logit_rows(tape.value(logits_fake), "generated")?;
    ensure!(wu == wg, Dimension, "logit widths {wu} and {wg} differ");
    ensure!(bu > 0 && bg > 0, Empty, "empty batch in unsupervised loss");
    let k = wu - 1;
    let (inv_u, inv_g) = (T::one() / T::of(bu as f64), T::one() / T::of(bg as f64));

    let mut term_u = T::zero();
    let mut grad_u = vec![T::zero(); bu * wu];
    for (i, row) in rows_u.enumerate() {
        // -log(1 - p_fake) = lse(all) - lse(real)
        let lse_real = log_sum_exp(&row[..k]);
        term_u += softplus(row[k] - lse_real);
        let p = softmax(row);
        let q = softmax(&row[..k]);
        for j in 0..wu {
            let qj = if j < k { q[j] } else { T::zero() };
            grad_u[i * wu + j] = (p[j] - qj) * inv_u;
        }
    }
    let mut term_g = T::zero();
    let mut grad_g = vec![T::zero(); bg * wg];
    for (i, row) in rows_g.enumerate() {
        // -log p_fake = lse(all) - l_fake
        term_g += softplus(log_sum_exp(&row[..k]) - row[k]);
        let p = softmax(row);
        for j in 0..wg {
            grad_g[i * wg + j] = p[j] * inv_g;
        }
        grad_g[i * wg + k] -= inv_g;
    }
    let value = Tensor::scalar(term_u * inv_u + term_g * inv_g);
    tape.record(
        value,
        &[logits_unlabeled, logits_fake],
        Box::new(RowGradRule {
            local: vec![grad_u, grad_g],
        }),
    )
}

/// `L_D = L_supervised + L_unsupervised`
pub fn discriminator_loss<T: Real>(tape: &mut Tape<T>, supervised: Var, unsupervised: Var) -> Result<Var> {
    tape.add(supervised, unsupervised)
}

/// Generator adversarial term on the generated batch.
pub fn adversarial_generator_loss<T: Real>(
    tape: &mut Tape<T>,
    logits_fake: Var,
    form: AdversarialForm,
) -> Result<Var> {
    let (batch, width, rows) = logit_rows(tape.value(logits_fake), "generated")?;
    ensure!(batch > 0, Empty, "empty generated batch");
    let k = width - 1;
    let inv_b = T::one() / T::of(batch as f64);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); batch * width];
    for (i, row) in rows.enumerate() {
        let lse_real = log_sum_exp(&row[..k]);
        let p = softmax(row);
        match form {
            AdversarialForm::NonSaturating => {
                // -log D = -log(1 - p_fake)
                total += softplus(row[k] - lse_real);
                let q = softmax(&row[..k]);
                for j in 0..width {
                    let qj = if j < k { q[j] } else { T::zero() };
                    grad[i * width + j] = (p[j] - qj) * inv_b;
                }
            }
            AdversarialForm::Saturating => {
                // log(1 - D) = log p_fake
                total -= softplus(lse_real - row[k]);
                for j in 0..width {
                    grad[i * width + j] = -p[j] * inv_b;
                }
                grad[i * width + k] += inv_b;
            }
        }
    }
    tape.record(
        Tensor::scalar(total * inv_b),
        &[logits_fake],
        Box::new(RowGradRule { local: vec![grad] }),
    )
}

struct FeatureMatchRule<T> {
    /// `mean_G - mean_U`, one entry per feature element.
    diff: Vec<T>,
    batches: (usize, usize),
    scale: T,
}

impl<T: Real> Backward<T> for FeatureMatchRule<T> {
    fn backward(&self, ctx: BackwardCtx<'_, T>) -> Result<Vec<Option<Vec<T>>>> {
        let g = ctx.grad[0] * self.scale * T::of(2.0);
        let spread = |batch: usize, sign: T| -> Vec<T> {
            let c = g * sign / T::of(batch as f64);
            let per: Vec<T> = self.diff.iter().map(|&d| d * c).collect();
            (0..batch).flat_map(|_| per.iter().copied()).collect()
        };
        Ok(vec![
            ctx.needs[0].then(|| spread(self.batches.0, T::one())),
            ctx.needs[1].then(|| spread(self.batches.1, -T::one())),
        ])
    }
}

fn batch_mean<T: Real>(t: &Tensor<T>) -> Vec<T> {
    let b = t.shape()[0];
    let per = t.numel() / b;
    let mut m = vec![T::zero(); per];
    for row in t.data().chunks(per) {
        m.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
    }
    let inv = T::one() / T::of(b as f64);
    m.iter_mut().for_each(|a| *a *= inv);
    m
}

/// `scale * || mean_B(generated) - mean_B(unlabeled) ||^2` over the
/// per-sample feature shape.
pub fn feature_matching<T: Real>(tape: &mut Tape<T>, generated: Var, unlabeled: Var, scale: T) -> Result<Var> {
    let (sg, su) = (tape.shape(generated).to_vec(), tape.shape(unlabeled).to_vec());
    ensure!(
        sg.len() >= 2 && sg[1..] == su[1..],
        Dimension,
        "feature shapes {sg:?} and {su:?} differ"
    );
    let mg = batch_mean(tape.value(generated));
    let mu = batch_mean(tape.value(unlabeled));
    let diff: Vec<T> = mg.iter().zip(&mu).map(|(&a, &b)| a - b).collect();
    let sq: T = diff.iter().map(|&d| d * d).sum();
    tape.record(
        Tensor::scalar(scale * sq),
        &[generated, unlabeled],
        Box::new(FeatureMatchRule {
            diff,
            batches: (sg[0], su[0]),
            scale,
        }),
    )
}

/// Unnormalised feature-matching loss of one discriminator layer.
pub fn feature_matching_layer<T: Real>(
    tape: &mut Tape<T>,
    generated: &FeatureTap,
    unlabeled: &FeatureTap,
) -> Result<Var> {
    ensure!(
        generated.layer == unlabeled.layer
            && generated.channels == unlabeled.channels
            && generated.length == unlabeled.length,
        Dimension,
        "feature taps from layer {} ({}x{}) and layer {} ({}x{})",
        generated.layer,
        generated.channels,
        generated.length,
        unlabeled.layer,
        unlabeled.channels,
        unlabeled.length
    );
    feature_matching(tape, generated.var, unlabeled.var, T::one())
}

/// Joint feature-matching loss and the unnormalised per-layer values.
pub struct JointFeatureMatching<T> {
    pub total: Var,
    pub per_layer: BTreeMap<usize, T>,
}

/// `sum_{l in layers} L_FM^(l) / (2 Ch^(l) Le^(l))`
pub fn joint_feature_matching<T: Real>(
    tape: &mut Tape<T>,
    generated: &[FeatureTap],
    unlabeled: &[FeatureTap],
    layers: &LayerSet,
) -> Result<JointFeatureMatching<T>> {
    ensure!(!layers.is_empty(), Config, "joint feature matching over no layers");
    let mut terms = Vec::new();
    let mut per_layer = BTreeMap::new();
    for l in layers.iter() {
        let find = |taps: &[FeatureTap]| {
            taps.iter()
                .find(|t| t.layer == l)
                .copied()
                .ok_or_else(|| Error::Config(format!("no feature tap for layer {l}")))
        };
        let (g, u) = (find(generated)?, find(unlabeled)?);
        let v = feature_matching_layer(tape, &g, &u)?;
        per_layer.insert(l, tape.value(v).data()[0]);
        let norm = T::one() / T::of(2.0 * (g.channels * g.length) as f64);
        terms.push((v, norm));
    }
    let total = tape.weighted_sum(&terms)?;
    Ok(JointFeatureMatching { total, per_layer })
}

/// `alpha * adv + beta * fm`. `fm` may be omitted only when `beta == 0`.
pub fn weighted_generator_loss<T: Real>(
    tape: &mut Tape<T>,
    adv: Var,
    fm: Option<Var>,
    config: &LossConfig,
) -> Result<Var> {
    config.validate()?;
    match fm {
        Some(fm) => tape.weighted_sum(&[(adv, T::of(config.alpha)), (fm, T::of(config.beta))]),
        None => {
            ensure!(
                config.beta == 0.0,
                Config,
                "feature-matching term missing with beta = {}",
                config.beta
            );
            tape.weighted_sum(&[(adv, T::of(config.alpha))])
        }
    }
}

/// Non-empty subset of the discriminator feature layers `1..=7`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LayerSet(u8);

impl LayerSet {
    pub fn new(layers: &[usize]) -> Result<Self> {
        let mut bits = 0u8;
        for &l in layers {
            ensure!(
                (1..=TAP_COUNT).contains(&l),
                Config,
                "feature layer {l} outside 1..={TAP_COUNT}"
            );
            bits |= 1 << (l - 1);
        }
        Ok(Self(bits))
    }

    pub fn all() -> Self {
        Self((1u8 << TAP_COUNT) - 1)
    }

    pub fn empty() -> Self {
        Self(0)
    }

    /// Layers `1..=n`.
    pub fn prefix(n: usize) -> Result<Self> {
        Self::new(&(1..=n).collect::<Vec<_>>())
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(&self, layer: usize) -> bool {
        (1..=TAP_COUNT).contains(&layer) && self.0 & (1 << (layer - 1)) != 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=TAP_COUNT).filter(|&l| self.contains(l))
    }
}

impl fmt::Display for LayerSet {
    /// Comma-separated layer list, e.g. `1,2,3`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|l| l.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for LayerSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches(['{', '[']).trim_end_matches(['}', ']']);
        if s.trim().is_empty() {
            return Ok(Self::empty());
        }
        let layers = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad feature layer {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(&layers)
    }
}

/// Weights of the generator objective and the feature layers it matches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub l_mul: LayerSet,
    pub adversarial: AdversarialForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
            l_mul: LayerSet::all(),
            adversarial: AdversarialForm::NonSaturating,
        }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, beta: f64, l_mul: LayerSet) -> Result<Self> {
        let c = Self {
            alpha,
            beta,
            l_mul,
            adversarial: AdversarialForm::NonSaturating,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.alpha >= 0.0 && self.beta >= 0.0,
            Config,
            "loss weights must be non-negative, got alpha={} beta={}",
            self.alpha,
            self.beta
        );
        ensure!(
            (self.alpha + self.beta - 1.0).abs() <= 1e-9,
            Config,
            "alpha + beta must equal 1, got {}",
            self.alpha + self.beta
        );
        ensure!(
            self.beta == 0.0 || !self.l_mul.is_empty(),
            Config,
            "feature layer set is empty while beta = {}",
            self.beta
        );
        Ok(())
    }
}

/// Scalar values of every loss term of one iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub unsupervised: f64,
    pub d_total: f64,
    pub adv: f64,
    pub fm_per_layer: BTreeMap<usize, f64>,
    pub fm_joint: f64,
    pub g_total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> Tensor<f64> {
        let w = rows[0].len();
        Tensor::new(&[rows.len(), w], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn eval(f: impl FnOnce(&mut Tape<f64>) -> Var) -> f64 {
        let mut tape = Tape::new();
        let v = f(&mut tape);
        tape.value(v).data()[0]
    }

    #[test]
    fn uniform_supervised_is_ln3() {
        for fake in [-50.0, 0.0, 7.0] {
            let v = eval(|t| {
                let l = t.input(logits(&[&[0.4, 0.4, 0.4, fake]])).unwrap();
                supervised_loss(t, l, &[0]).unwrap()
            });
            assert!((v - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn supervised_rejects_bad_label() {
        let mut t = Tape::new();
        let l = t.input(logits(&[&[0.0, 0.0, 0.0, 0.0]])).unwrap();
        assert!(matches!(supervised_loss(&mut t, l, &[3]), Err(Error::Label(_))));
        assert!(supervised_loss(&mut t, l, &[0, 1]).is_err());
    }

    #[test]
    fn uniform_unsupervised_and_adversarial() {
        let row: &[f64] = &[1.0, 1.0, 1.0, 1.0];
        let u = eval(|t| {
            let a = t.input(logits(&[row, row])).unwrap();
            let b = t.input(logits(&[row])).unwrap();
            unsupervised_loss(t, a, b).unwrap()
        });
        assert!((u - ((4.0f64 / 3.0).ln() + 4f64.ln())).abs() < 1e-12);
        let a = eval(|t| {
            let b = t.input(logits(&[row])).unwrap();
            adversarial_generator_loss(t, b, AdversarialForm::NonSaturating).unwrap()
        });
        assert!((a + (0.75f64).ln()).abs() < 1e-12);
        assert!((fake_probability(&logits(&[row])).unwrap()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn limits_are_finite_and_monotone() {
        let mut prev = f64::INFINITY;
        for fake in [0.0, -10.0, -100.0, -1000.0] {
            let v = eval(|t| {
                let b = t.input(logits(&[&[0.0, 0.0, 0.0, fake]])).unwrap();
                adversarial_generator_loss(t, b, AdversarialForm::NonSaturating).unwrap()
            });
            assert!(v.is_finite() && v >= 0.0 && (v < prev || v == 0.0));
            prev = v;
        }
        assert!(prev < 1e-12);
        let p = fake_probability(&logits(&[&[0.0, 0.0, 0.0, 800.0]])).unwrap();
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn layer_set_parsing() {
        assert_eq!("1,2,3".parse::<LayerSet>().unwrap(), LayerSet::prefix(3).unwrap());
        assert_eq!("{1, 2, 3, 4, 5, 6, 7}".parse::<LayerSet>().unwrap(), LayerSet::all());
        assert!("0".parse::<LayerSet>().is_err());
        assert!("8".parse::<LayerSet>().is_err());
        assert!("a".parse::<LayerSet>().is_err());
        assert_eq!(LayerSet::all().to_string(), "1,2,3,4,5,6,7");
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::new(0.7, 0.3, LayerSet::all()).is_ok());
        assert!(LossConfig::new(0.7, 0.4, LayerSet::all()).is_err());
        assert!(LossConfig::new(1.2, -0.2, LayerSet::all()).is_err());
        assert!(LossConfig::new(1.0, 0.0, LayerSet::empty()).is_ok());
        assert!(LossConfig::new(0.5, 0.5, LayerSet::empty()).is_err());
    }

    #[test]
    fn weighted_loss_arithmetic() {
        let cfg = LossConfig::new(0.7, 0.3, LayerSet::all()).unwrap();
        let v = eval(|t| {
            let a = t.input(Tensor::scalar(2.0)).unwrap();
            let f = t.input(Tensor::scalar(1.0)).unwrap();
            weighted_generator_loss(t, a, Some(f), &cfg).unwrap()
        });
        assert!((v - 1.7).abs() < 1e-15);
        let mut t = Tape::<f64>::new();
        let a = t.input(Tensor::scalar(2.0)).unwrap();
        assert!(weighted_generator_loss(&mut t, a, None, &cfg).is_err());
    }
}
