//! Alternating discriminator/generator optimisation and the supervised-only
//! baseline.
//!
//! One iteration of semi-supervised training draws a labeled batch, a noise
//! batch and an unlabeled batch, takes one Adam step on the discriminator,
//! then draws fresh noise and unlabeled batches and takes one Adam step on
//! the generator. An epoch is `ceil(|train| / batch_size)` iterations; every
//! training signal is in the unlabeled pool, labeled or not.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_models, Checkpoint};
use crate::error::{ensure, Error, Result};
use crate::losses::{
    adversarial_generator_loss, discriminator_loss, joint_feature_matching, supervised_loss, unsupervised_loss,
    weighted_generator_loss, LossBreakdown, LossConfig,
};
use crate::models::{Discriminator, Generator, LATENT_DIM, NUM_CLASSES};
use crate::nn::{AdamConfig, AdamState, ForwardCtx, Mode, Real, Tape, Tensor};
use crate::synth::{split_semisupervised, Dataset, SignalBatch};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}, expected f32 or f64"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TrainMode {
    #[default]
    Wlssgan,
    Supervised,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wlssgan" => Ok(Self::Wlssgan),
            "supervised" => Ok(Self::Supervised),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}, expected wlssgan or supervised"
            ))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Wlssgan => "wlssgan",
            Self::Supervised => "supervised",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// When set, only this many training samples keep their labels.
    pub n_lab: Option<usize>,
    pub seed: u64,
    pub steady_window_frac: f64,
    pub eval_every: usize,
    pub precision: Precision,
    /// Stop after this many iterations in total, possibly mid-epoch.
    pub max_iterations: Option<usize>,
    /// Refuse batches larger than the pool they are drawn from instead of
    /// cycling through it more than once per batch.
    pub strict_batches: bool,
    pub latent_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 64,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            n_lab: None,
            seed: 0,
            steady_window_frac: 0.2,
            eval_every: 1,
            precision: Precision::F32,
            max_iterations: None,
            strict_batches: false,
            latent_dim: LATENT_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, Config, "epochs must be positive");
        ensure!(self.batch_size >= 2, Config, "batch size must be at least 2, got {}", self.batch_size);
        ensure!(self.eval_every >= 1, Config, "eval_every must be positive");
        ensure!(self.latent_dim >= 1, Config, "latent dimension must be positive");
        ensure!(
            self.steady_window_frac > 0.0 && self.steady_window_frac <= 1.0,
            Config,
            "steady window fraction {} outside (0, 1]",
            self.steady_window_frac
        );
        let a = &self.adam;
        ensure!(a.lr >= 0.0 && a.lr.is_finite(), Config, "learning rate {} is invalid", a.lr);
        ensure!(
            (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0,
            Config,
            "invalid Adam settings {a:?}"
        );
        if let Some(n) = self.max_iterations {
            ensure!(n >= 1, Config, "iteration budget must be positive");
        }
        self.loss.validate()
    }
}

/// Per-epoch means of the iteration losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub d_total: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    pub g_total: f64,
    pub adv: f64,
    pub fm_joint: f64,
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steady_state_accuracy: Option<f64>,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub iterations: usize,
}

/// Number of trailing epochs averaged for the steady-state accuracy.
pub fn steady_window(epochs: usize, frac: f64) -> usize {
    ((frac * epochs as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Mean test accuracy over the final `ceil(window_frac * epochs)` epochs.
/// Epochs without an evaluation are skipped.
pub fn steady_state_accuracy(report: &TrainReport, window_frac: f64) -> Result<f64> {
    ensure!(!report.epochs.is_empty(), Empty, "empty accuracy trace");
    ensure!(
        window_frac > 0.0 && window_frac <= 1.0,
        Config,
        "window fraction {window_frac} outside (0, 1]"
    );
    let n = report.epochs.len();
    let w = steady_window(n, window_frac).min(n);
    let accs: Vec<f64> = report.epochs[n - w..].iter().filter_map(|e| e.test_acc).collect();
    ensure!(!accs.is_empty(), Empty, "no evaluated epochs in the steady-state window");
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Fraction of test samples classified correctly (eval mode).
pub fn evaluate<T: Real>(discriminator: &mut Discriminator<T>, test: &SignalBatch) -> Result<f64> {
    ensure!(!test.is_empty(), Empty, "empty test set");
    let labels = test
        .labels()
        .iter()
        .map(|l| l.map(|c| c.label()).ok_or_else(|| Error::Label("unlabeled test sample".into())))
        .collect::<Result<Vec<_>>>()?;
    let pred = discriminator.classify(&test.all_tensor()?)?;
    Ok(accuracy(&pred, &labels))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Endless stream of pool indices: each pass is a fresh shuffle.
#[derive(Clone, Debug)]
pub struct CyclicSampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl CyclicSampler {
    pub fn new(pool: Vec<usize>) -> Result<Self> {
        ensure!(!pool.is_empty(), Empty, "cannot sample from an empty pool");
        Ok(Self {
            pool,
            order: Vec::new(),
            pos: 0,
        })
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.clone_from(&self.pool);
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn init_seed(seed: u64, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng.gen()
}

/// Training state: both networks, their optimisers, the samplers and the
/// single RNG that drives shuffling, noise and dropout.
pub struct Trainer<T: Real> {
    pub mode: TrainMode,
    pub config: TrainConfig,
    pub generator: Option<Generator<T>>,
    pub discriminator: Discriminator<T>,
    pub opt_g: Option<AdamState<T>>,
    pub opt_d: AdamState<T>,
    data: Dataset,
    test: SignalBatch,
    labeled: CyclicSampler,
    unlabeled: CyclicSampler,
    rng: ChaCha8Rng,
    iterations: usize,
}

impl<T: Real> Trainer<T> {
    /// Splits the dataset when `config.n_lab` is set and builds fresh,
    /// seeded networks.
    pub fn new(dataset: &Dataset, config: &TrainConfig, mode: TrainMode) -> Result<Self> {
        config.validate()?;
        let data = match config.n_lab {
            Some(n) => split_semisupervised(dataset, n, config.seed)?,
            None => dataset.clone(),
        };
        let labeled_pool = data.labeled_train_indices();
        ensure!(!labeled_pool.is_empty(), Empty, "no labeled training samples");
        let train_pool = data.indices(crate::synth::Role::Train);
        if config.strict_batches {
            ensure!(
                config.batch_size <= labeled_pool.len(),
                Config,
                "batch size {} exceeds the {} labeled samples",
                config.batch_size,
                labeled_pool.len()
            );
            ensure!(
                config.batch_size <= train_pool.len(),
                Config,
                "batch size {} exceeds the {} training samples",
                config.batch_size,
                train_pool.len()
            );
        }
        let test = data.test();
        let discriminator = Discriminator::new(NUM_CLASSES, init_seed(config.seed, 2))?;
        let opt_d = AdamState::new(config.adam, &discriminator.network().params());
        let (generator, opt_g) = match mode {
            TrainMode::Wlssgan => {
                let g = Generator::new(config.latent_dim, init_seed(config.seed, 1))?;
                let opt = AdamState::new(config.adam, &g.network().params());
                (Some(g), Some(opt))
            }
            TrainMode::Supervised => (None, None),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(3);
        Ok(Self {
            mode,
            config: config.clone(),
            generator,
            discriminator,
            opt_g,
            opt_d,
            labeled: CyclicSampler::new(labeled_pool)?,
            unlabeled: CyclicSampler::new(train_pool)?,
            data,
            test,
            rng,
            iterations: 0,
        })
    }

    /// The dataset after the labeled/unlabeled split.
    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.unlabeled.pool_len().div_ceil(self.config.batch_size)
    }

    fn labeled_batch(&mut self) -> Result<(Tensor<T>, Vec<usize>)> {
        let idx = self.labeled.next_batch(self.config.batch_size, &mut self.rng);
        let labels = idx
            .iter()
            .map(|&i| self.data.signals.label(i).expect("labeled pool").label())
            .collect();
        Ok((self.data.signals.to_tensor(&idx)?, labels))
    }

    fn unlabeled_batch(&mut self) -> Result<Tensor<T>> {
        let idx = self.unlabeled.next_batch(self.config.batch_size, &mut self.rng);
        self.data.signals.to_tensor(&idx)
    }

    fn generator_ref(&mut self) -> Result<&mut Generator<T>> {
        self.generator
            .as_mut()
            .ok_or_else(|| Error::Contract("supervised trainer has no generator".into()))
    }

    /// One discriminator update on `L_supervised + L_unsupervised`. The
    /// generator runs frozen, without touching its running statistics, and
    /// only the real batches update the discriminator's running statistics.
    pub fn d_step(&mut self) -> Result<LossBreakdown> {
        let b = self.config.batch_size;
        let (xl, yl) = self.labeled_batch()?;
        self.generator_ref()?;
        let z = self.generator.as_ref().unwrap().sample_latent(b, &mut self.rng);
        let xu = self.unlabeled_batch()?;

        let xg = {
            let mut tape = Tape::new();
            let zv = tape.input(z)?;
            let mut ctx = ForwardCtx {
                mode: Mode::Train,
                update_running: false,
                track_params: false,
                rng: &mut self.rng,
            };
            let g = self.generator.as_mut().unwrap();
            let (out, _) = g.forward(&mut tape, zv, &mut ctx)?;
            tape.value(out).clone()
        };

        let mut tape = Tape::new();
        let (vl, vu, vg) = (tape.input(xl)?, tape.input(xu)?, tape.input(xg)?);
        let mut ctx = ForwardCtx {
            mode: Mode::Train,
            update_running: true,
            track_params: true,
            rng: &mut self.rng,
        };
        let d = &mut self.discriminator;
        let bind = d.network().bind(&mut tape, true)?;
        let ol = d.forward_with(&mut tape, vl, &mut ctx, &bind)?;
        let ou = d.forward_with(&mut tape, vu, &mut ctx, &bind)?;
        // Eval-mode statistics should describe real signals only.
        ctx.update_running = false;
        let og = d.forward_with(&mut tape, vg, &mut ctx, &bind)?;
        let sup = supervised_loss(&mut tape, ol.logits, &yl)?;
        let unsup = unsupervised_loss(&mut tape, ou.logits, og.logits)?;
        let total = discriminator_loss(&mut tape, sup, unsup)?;
        let grads = tape.backward(total)?;
        let net = d.network_mut();
        net.zero_grad();
        net.absorb_grads(&grads, &bind)?;
        self.opt_d.step(&mut net.params_mut())?;
        let v = |x| tape.value(x).data()[0].as_f64();
        Ok(LossBreakdown {
            supervised: v(sup),
            unsupervised: v(unsup),
            d_total: v(total),
            ..Default::default()
        })
    }

    /// One generator update on `alpha * L_adv + beta * L_FM`. The
    /// discriminator is a constant here: batch statistics are used but its
    /// running statistics are left alone.
    pub fn g_step(&mut self) -> Result<LossBreakdown> {
        let b = self.config.batch_size;
        let z = {
            let g = self.generator.as_ref().ok_or_else(|| Error::Contract("no generator".into()))?;
            g.sample_latent(b, &mut self.rng)
        };
        let xu = self.unlabeled_batch()?;
        let loss_cfg = self.config.loss;

        let mut tape = Tape::new();
        let zv = tape.input(z)?;
        let g = self.generator.as_mut().unwrap();
        let (xg, g_bind) = g.forward(
            &mut tape,
            zv,
            &mut ForwardCtx {
                mode: Mode::Train,
                update_running: true,
                track_params: true,
                rng: &mut self.rng,
            },
        )?;
        let mut d_ctx = ForwardCtx {
            mode: Mode::Train,
            update_running: false,
            track_params: false,
            rng: &mut self.rng,
        };
        let d = &mut self.discriminator;
        let d_bind = d.network().bind(&mut tape, false)?;
        let og = d.forward_with(&mut tape, xg, &mut d_ctx, &d_bind)?;
        let adv = adversarial_generator_loss(&mut tape, og.logits, loss_cfg.adversarial)?;
        let mut out = LossBreakdown::default();
        let fm = if loss_cfg.beta > 0.0 {
            let vu = tape.input(xu)?;
            let ou = d.forward_with(&mut tape, vu, &mut d_ctx, &d_bind)?;
            let joint = joint_feature_matching(&mut tape, &og.taps, &ou.taps, &loss_cfg.l_mul)?;
            out.fm_per_layer = joint.per_layer.iter().map(|(&l, v)| (l, v.as_f64())).collect();
            Some(joint.total)
        } else {
            None
        };
        let total = weighted_generator_loss(&mut tape, adv, fm, &loss_cfg)?;
        let grads = tape.backward(total)?;
        let g = self.generator.as_mut().unwrap();
        let net = g.network_mut();
        net.zero_grad();
        net.absorb_grads(&grads, &g_bind)?;
        self.opt_g.as_mut().unwrap().step(&mut net.params_mut())?;
        let v = |x| tape.value(x).data()[0].as_f64();
        out.adv = v(adv);
        out.fm_joint = fm.map_or(0.0, v);
        out.g_total = v(total);
        Ok(out)
    }

    /// One discriminator update on `L_supervised` alone.
    pub fn supervised_step(&mut self) -> Result<LossBreakdown> {
        let (xl, yl) = self.labeled_batch()?;
        let mut tape = Tape::new();
        let vl = tape.input(xl)?;
        let d = &mut self.discriminator;
        let ol = d.forward(
            &mut tape,
            vl,
            &mut ForwardCtx {
                mode: Mode::Train,
                update_running: true,
                track_params: true,
                rng: &mut self.rng,
            },
        )?;
        let sup = supervised_loss(&mut tape, ol.logits, &yl)?;
        let grads = tape.backward(sup)?;
        let net = d.network_mut();
        net.zero_grad();
        net.absorb_grads(&grads, &ol.bindings)?;
        self.opt_d.step(&mut net.params_mut())?;
        let s = tape.value(sup).data()[0].as_f64();
        Ok(LossBreakdown {
            supervised: s,
            d_total: s,
            ..Default::default()
        })
    }

    pub fn iteration(&mut self) -> Result<LossBreakdown> {
        let out = match self.mode {
            TrainMode::Supervised => self.supervised_step()?,
            TrainMode::Wlssgan => {
                let d = self.d_step()?;
                let g = self.g_step()?;
                LossBreakdown {
                    supervised: d.supervised,
                    unsupervised: d.unsupervised,
                    d_total: d.d_total,
                    ..g
                }
            }
        };
        self.iterations += 1;
        Ok(out)
    }

    /// Test accuracy, or `None` without a test split.
    pub fn evaluate(&mut self) -> Result<Option<f64>> {
        if self.test.is_empty() {
            return Ok(None);
        }
        evaluate(&mut self.discriminator, &self.test).map(Some)
    }

    pub fn checkpoint(&self, with_optimizer: bool) -> Result<Checkpoint> {
        save_models(
            self.generator.as_ref(),
            &self.discriminator,
            with_optimizer.then_some((self.opt_g.as_ref(), &self.opt_d)),
        )
    }

    /// Runs the configured budget, calling `observer` after every epoch.
    pub fn run<F>(&mut self, mut observer: F) -> Result<TrainReport>
    where
        F: FnMut(&EpochRecord, &Self) -> Result<()>,
    {
        let start = Instant::now();
        let per_epoch = self.iterations_per_epoch();
        let budget = self
            .config
            .max_iterations
            .unwrap_or(usize::MAX)
            .min(self.config.epochs.saturating_mul(per_epoch));
        let epochs = budget.div_ceil(per_epoch);
        let mut report = TrainReport {
            seed: self.config.seed,
            ..Default::default()
        };
        let mut done = 0;
        for epoch in 1..=epochs {
            let n = per_epoch.min(budget - done);
            let mut rec = EpochRecord {
                epoch,
                ..Default::default()
            };
            for _ in 0..n {
                let l = self.iteration()?;
                rec.d_total += l.d_total;
                rec.supervised += l.supervised;
                rec.unsupervised += l.unsupervised;
                rec.g_total += l.g_total;
                rec.adv += l.adv;
                rec.fm_joint += l.fm_joint;
            }
            done += n;
            let inv = 1.0 / n as f64;
            for x in [
                &mut rec.d_total,
                &mut rec.supervised,
                &mut rec.unsupervised,
                &mut rec.g_total,
                &mut rec.adv,
                &mut rec.fm_joint,
            ] {
                *x *= inv;
            }
            if epoch % self.config.eval_every == 0 || epoch == epochs {
                rec.test_acc = self.evaluate()?;
            }
            observer(&rec, self)?;
            report.epochs.push(rec);
        }
        report.iterations = done;
        report.steady_state_accuracy = steady_state_accuracy(&report, self.config.steady_window_frac).ok();
        report.wall_clock_secs = start.elapsed().as_secs_f64();
        Ok(report)
    }
}

/// Semi-supervised training of both networks.
pub fn train_wlssgan<T: Real>(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(Generator<T>, Discriminator<T>, TrainReport)> {
    let mut t = Trainer::<T>::new(dataset, config, TrainMode::Wlssgan)?;
    let report = t.run(|_, _| Ok(()))?;
    Ok((t.generator.unwrap(), t.discriminator, report))
}

/// Trains the classifier on the labeled samples only.
pub fn train_supervised<T: Real>(dataset: &Dataset, config: &TrainConfig) -> Result<(Discriminator<T>, TrainReport)> {
    let mut t = Trainer::<T>::new(dataset, config, TrainMode::Supervised)?;
    let report = t.run(|_, _| Ok(()))?;
    Ok((t.discriminator, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(accs: &[f64]) -> TrainReport {
        TrainReport {
            epochs: accs
                .iter()
                .enumerate()
                .map(|(i, &a)| EpochRecord {
                    epoch: i + 1,
                    test_acc: Some(a),
                    ..Default::default()
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn steady_state_windows() {
        assert!((steady_state_accuracy(&report(&[0.9; 7]), 0.2).unwrap() - 0.9).abs() < 1e-15);
        let r = report(&[0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.8, 0.8]);
        assert!((steady_state_accuracy(&r, 0.2).unwrap() - 0.8).abs() < 1e-15);
        let r = report(&[0.2, 0.4, 0.9]);
        assert!((steady_state_accuracy(&r, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(steady_state_accuracy(&report(&[]), 0.2).is_err());
        assert_eq!(steady_window(200, 0.2), 40);
        assert_eq!(steady_window(3, 0.2), 1);
    }

    #[test]
    fn sampler_covers_pool_each_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = CyclicSampler::new(vec![3, 5, 7]).unwrap();
        let mut first: Vec<usize> = s.next_batch(3, &mut rng);
        first.sort();
        assert_eq!(first, vec![3, 5, 7]);
        assert_eq!(s.next_batch(10, &mut rng).len(), 10);
        assert!(CyclicSampler::new(Vec::new()).is_err());
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            steady_window_frac: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("f64".parse::<Precision>().unwrap(), Precision::F64);
        assert!("wl".parse::<TrainMode>().is_err());
    }
}
