#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wlssgan::nn::{GradCheckConfig, GradCheckReport, Tape, Tensor, Var};
use wlssgan::Result;

pub mod suite;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Values bounded away from zero, for checks through kinked activations.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub fn grad(t: Tensor<f64>) -> Tensor<f64> {
    t.with_grad()
}

/// Gradient check of `f` over `params`; `f` receives the bound variables.
pub fn check<F>(params: Vec<Tensor<f64>>, mut f: F) -> GradCheckReport
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut model: Vec<Tensor<f64>> = params.into_iter().map(Tensor::with_grad).collect();
    wlssgan::nn::grad_check(
        &mut model,
        |m: &mut Vec<Tensor<f64>>, tape: &mut Tape<f64>| {
            let vars = m.iter().map(|t| tape.param(t)).collect::<Result<Vec<_>>>()?;
            let out = f(tape, &vars)?;
            Ok((out, vars))
        },
        &GradCheckConfig::default(),
    )
    .unwrap()
}

pub fn assert_passed(what: &str, report: &GradCheckReport) {
    assert!(
        report.passed(),
        "{what}: {} of {} coordinates failed ({} kinks), max rel error {:e}, first {:?}",
        report.failures.len(),
        report.checked,
        report.kinks.len(),
        report.max_rel_error,
        report.failures.first()
    );
}

/// Scalar `sum(y * r)` with a fixed random `r`, so every output element
/// contributes with a distinct weight.
pub fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let r = normal(&shape, 1.0, &mut rng(seed ^ 0x5eed_0f_9a11));
    let rv = tape.input(r)?;
    tape.dot(y, rv)
}

use wlssgan::losses::{
    adversarial_generator_loss, discriminator_loss, joint_feature_matching, supervised_loss, unsupervised_loss,
    weighted_generator_loss, LossConfig,
};
use wlssgan::models::{Discriminator, Generator, LATENT_DIM};
use wlssgan::nn::{grad_check, ForwardCtx, Mode};

fn train_ctx(rng: &mut ChaCha8Rng, track: bool) -> ForwardCtx<'_, ChaCha8Rng> {
    ForwardCtx {
        mode: Mode::Train,
        update_running: false,
        track_params: track,
        rng,
    }
}

/// Generated batch from a frozen generator in train mode.
pub fn fake_batch(g: &mut Generator<f64>, batch: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let z = g.sample_latent(batch, &mut r);
    let mut tape = Tape::new();
    let zv = tape.input(z).unwrap();
    let (out, _) = g.forward(&mut tape, zv, &mut train_ctx(&mut r, false)).unwrap();
    tape.value(out).clone()
}

/// `L_D` through three discriminator passes (labeled, unlabeled,
/// generated) at batch size 2, with a fixed dropout mask.
pub fn full_discriminator_check(cfg: &GradCheckConfig) -> GradCheckReport {
    let mut d = Discriminator::<f64>::new(3, 11).unwrap();
    let mut g = Generator::<f64>::new(LATENT_DIM, 12).unwrap();
    let xl = normal(&[2, 1, 512], 0.5, &mut rng(13));
    let xu = normal(&[2, 1, 512], 0.5, &mut rng(14));
    let xg = fake_batch(&mut g, 2, 15);
    let labels = [0usize, 2];
    grad_check(
        &mut d,
        |d: &mut Discriminator<f64>, tape: &mut Tape<f64>| {
            let mut r = rng(16);
            let bind = d.network().bind(tape, true)?;
            let (vl, vu, vg) = (tape.input(xl.clone())?, tape.input(xu.clone())?, tape.input(xg.clone())?);
            let mut ctx = train_ctx(&mut r, true);
            let ol = d.forward_with(tape, vl, &mut ctx, &bind)?;
            let ou = d.forward_with(tape, vu, &mut ctx, &bind)?;
            let og = d.forward_with(tape, vg, &mut ctx, &bind)?;
            let sup = supervised_loss(tape, ol.logits, &labels)?;
            let unsup = unsupervised_loss(tape, ou.logits, og.logits)?;
            Ok((discriminator_loss(tape, sup, unsup)?, bind))
        },
        cfg,
    )
    .unwrap()
}

/// `alpha * L_adv + beta * L_FM` back through the discriminator into the
/// generator at batch size 2.
pub fn full_generator_check(loss: &LossConfig, cfg: &GradCheckConfig) -> GradCheckReport {
    let mut d = Discriminator::<f64>::new(3, 21).unwrap();
    let mut g = Generator::<f64>::new(LATENT_DIM, 22).unwrap();
    let z = g.sample_latent(2, &mut rng(23));
    let xu = normal(&[2, 1, 512], 0.5, &mut rng(24));
    grad_check(
        &mut g,
        |g: &mut Generator<f64>, tape: &mut Tape<f64>| {
            let mut r = rng(25);
            let zv = tape.input(z.clone())?;
            let (xg, g_bind) = g.forward(tape, zv, &mut train_ctx(&mut r, true))?;
            let d_bind = d.network().bind(tape, false)?;
            let og = d.forward_with(tape, xg, &mut train_ctx(&mut r, false), &d_bind)?;
            let adv = adversarial_generator_loss(tape, og.logits, loss.adversarial)?;
            let fm = if loss.beta > 0.0 {
                let vu = tape.input(xu.clone())?;
                let ou = d.forward_with(tape, vu, &mut train_ctx(&mut r, false), &d_bind)?;
                Some(joint_feature_matching(tape, &og.taps, &ou.taps, &loss.l_mul)?.total)
            } else {
                None
            };
            Ok((weighted_generator_loss(tape, adv, fm, loss)?, g_bind))
        },
        cfg,
    )
    .unwrap()
}
