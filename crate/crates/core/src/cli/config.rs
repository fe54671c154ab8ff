//! Flat `key = value` experiment configuration.
//!
//! Values are applied in order: built-in defaults, then a config file, then
//! command-line overrides, so a flag always wins over the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{ensure, Error, Result};
use crate::losses::{AdversarialForm, LayerSet};
use crate::synth::SpectrumParams;
use crate::trainer::{Precision, TrainConfig, TrainMode};

use super::sweep::SweepGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub mode: TrainMode,
    pub spectrum: SpectrumParams,
    pub per_class: usize,
    pub train_frac: f64,
    /// Dataset file read by train/sweep/synth/baseline/eval and written by
    /// gen-data.
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub n_synth: usize,
    pub workers: usize,
    pub sweep: SweepGrid,
    pub knn_k: usize,
    pub self_training_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            mode: TrainMode::Wlssgan,
            spectrum: SpectrumParams::default(),
            per_class: 1000,
            train_frac: 0.7,
            dataset: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            n_synth: 2100,
            workers: 1,
            sweep: SweepGrid::default(),
            knn_k: 5,
            self_training_threshold: 0.95,
        }
    }
}

/// Every accepted key, in the order they are documented.
pub const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "alpha",
    "beta",
    "lmul",
    "adversarial",
    "nlab",
    "seed",
    "steady_window",
    "eval_every",
    "precision",
    "max_iterations",
    "strict_batches",
    "latent_dim",
    "mode",
    "signal_length",
    "bragg_offset",
    "peak_width",
    "amp_jitter",
    "doppler_jitter",
    "noise_floor",
    "per_class",
    "train_frac",
    "dataset",
    "checkpoint",
    "out",
    "n_synth",
    "workers",
    "sweep_alpha_beta",
    "sweep_lmul",
    "sweep_nlab",
    "sweep_seeds",
    "sweep_supervised",
    "knn_k",
    "self_training_threshold",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key} = {value:?}: expected true or false"))),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

/// Splits `key = value` lines. `#` starts a comment; blank lines are
/// skipped; repeated keys are rejected.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        ensure!(!k.is_empty(), Config, "line {}: empty key", n + 1);
        ensure!(
            !out.iter().any(|(seen, _)| seen == k),
            Config,
            "line {}: key {k:?} given twice",
            n + 1
        );
        out.push((k.to_string(), v.trim_matches('"').to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.spectrum;
        match key {
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.adam.lr = parse(key, value)?,
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "adam_eps" => t.adam.eps = parse(key, value)?,
            "alpha" => t.loss.alpha = parse(key, value)?,
            "beta" => t.loss.beta = parse(key, value)?,
            "lmul" => t.loss.l_mul = parse::<LayerSet>(key, value)?,
            "adversarial" => t.loss.adversarial = parse::<AdversarialForm>(key, value)?,
            "nlab" => t.n_lab = optional(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "steady_window" => t.steady_window_frac = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "precision" => t.precision = parse::<Precision>(key, value)?,
            "max_iterations" => t.max_iterations = optional(key, value)?,
            "strict_batches" => t.strict_batches = parse_bool(key, value)?,
            "latent_dim" => t.latent_dim = parse(key, value)?,
            "mode" => self.mode = parse::<TrainMode>(key, value)?,
            "signal_length" => s.length = parse(key, value)?,
            "bragg_offset" => s.bragg_offset = parse(key, value)?,
            "peak_width" => s.peak_width = parse(key, value)?,
            "amp_jitter" => s.amp_jitter = parse(key, value)?,
            "doppler_jitter" => s.doppler_jitter = parse(key, value)?,
            "noise_floor" => s.noise_floor = parse(key, value)?,
            "per_class" => self.per_class = parse(key, value)?,
            "train_frac" => self.train_frac = parse(key, value)?,
            "dataset" => self.dataset = optional(key, value)?,
            "checkpoint" => self.checkpoint = optional(key, value)?,
            "out" => self.out = parse(key, value)?,
            "n_synth" => self.n_synth = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "sweep_alpha_beta" => self.sweep.alpha_beta = SweepGrid::parse_alpha_beta(value)?,
            "sweep_lmul" => self.sweep.l_mul = SweepGrid::parse_lmul(value)?,
            "sweep_nlab" => self.sweep.n_lab = SweepGrid::parse_nlab(value)?,
            "sweep_seeds" => self.sweep.seeds = parse(key, value)?,
            "sweep_supervised" => self.sweep.include_supervised = parse_bool(key, value)?,
            "knn_k" => self.knn_k = parse(key, value)?,
            "self_training_threshold" => self.self_training_threshold = parse(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?}; accepted keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_pairs(text)?)?;
        Ok(cfg)
    }

    /// Defaults, then the optional file, then `overrides`. The merged
    /// result is validated.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply(&parse_pairs(&text)?)?;
        }
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders every key so the output parses back to an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let s = &self.spectrum;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let path = |p: &Option<PathBuf>| opt(p.as_ref().map(|p| p.display().to_string()));
        let rows: Vec<(&str, String)> = vec![
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.adam.lr.to_string()),
            ("beta1", t.adam.beta1.to_string()),
            ("beta2", t.adam.beta2.to_string()),
            ("adam_eps", t.adam.eps.to_string()),
            ("alpha", t.loss.alpha.to_string()),
            ("beta", t.loss.beta.to_string()),
            ("lmul", t.loss.l_mul.to_string()),
            ("adversarial", t.loss.adversarial.to_string()),
            ("nlab", opt(t.n_lab.map(|n| n.to_string()))),
            ("seed", t.seed.to_string()),
            ("steady_window", t.steady_window_frac.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("precision", t.precision.to_string()),
            ("max_iterations", opt(t.max_iterations.map(|n| n.to_string()))),
            ("strict_batches", t.strict_batches.to_string()),
            ("latent_dim", t.latent_dim.to_string()),
            ("mode", self.mode.to_string()),
            ("signal_length", s.length.to_string()),
            ("bragg_offset", s.bragg_offset.to_string()),
            ("peak_width", s.peak_width.to_string()),
            ("amp_jitter", s.amp_jitter.to_string()),
            ("doppler_jitter", s.doppler_jitter.to_string()),
            ("noise_floor", s.noise_floor.to_string()),
            ("per_class", self.per_class.to_string()),
            ("train_frac", self.train_frac.to_string()),
            ("dataset", path(&self.dataset)),
            ("checkpoint", path(&self.checkpoint)),
            ("out", self.out.display().to_string()),
            ("n_synth", self.n_synth.to_string()),
            ("workers", self.workers.to_string()),
            ("sweep_alpha_beta", self.sweep.alpha_beta_text()),
            ("sweep_lmul", self.sweep.lmul_text()),
            ("sweep_nlab", self.sweep.nlab_text()),
            ("sweep_seeds", self.sweep.seeds.to_string()),
            ("sweep_supervised", self.sweep.include_supervised.to_string()),
            ("knn_k", self.knn_k.to_string()),
            ("self_training_threshold", self.self_training_threshold.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Checks the numeric settings. Paths are checked per command by
    /// [`ExperimentConfig::require_dataset`] and friends.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.spectrum.validate()?;
        ensure!(self.workers >= 1, Config, "workers must be positive");
        ensure!(self.n_synth >= 1, Config, "n_synth must be positive");
        ensure!(
            self.self_training_threshold > 0.0,
            Config,
            "self-training threshold must be positive"
        );
        self.sweep.validate()
    }

    pub fn require_dataset(&self) -> Result<&Path> {
        let p = self
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given (set `dataset` or --dataset)".into()))?;
        ensure!(p.is_file(), Config, "dataset {} does not exist", p.display());
        Ok(p)
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        let p = self
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("no checkpoint given (set `checkpoint` or --checkpoint)".into()))?;
        ensure!(p.is_file(), Config, "checkpoint {} does not exist", p.display());
        Ok(p)
    }

    /// Creates the output directory and checks that it is a directory.
    pub fn prepare_out(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)
            .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", self.out.display())))?;
        ensure!(self.out.is_dir(), Config, "{} is not a directory", self.out.display());
        Ok(&self.out)
    }
}
