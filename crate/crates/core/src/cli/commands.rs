//! The `gen-data`, `train`, `sweep`, `synth`, `baseline` and `eval`
//! commands. Each takes a resolved [`ExperimentConfig`] and writes its
//! artifacts under `config.out`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::baselines::{self_training_baseline, KnnModel, LogRegConfig, LogRegModel, SelfTrainingConfig};
use crate::checkpoint::{load_discriminator, load_generator, Checkpoint};
use crate::error::{Error, Result};
use crate::eval::{compare_batches, pair_nearest, SignalSource, SynthesisReport};
use crate::losses::LossConfig;
use crate::nn::Real;
use crate::synth::{make_dataset, read_dataset, split_semisupervised, write_dataset, Dataset, Role, SignalBatch};
use crate::trainer::{self, EpochRecord, Precision, TrainConfig, TrainMode, TrainReport, Trainer};

use super::config::ExperimentConfig;
use super::plot::{plot_curves, PlotLabels, Series};
use super::sweep::{write_sweep, SweepOutcome};

pub const EPOCH_HEADER: [&str; 8] = [
    "epoch",
    "d_total",
    "supervised",
    "unsupervised",
    "g_total",
    "adv",
    "fm_joint",
    "test_acc",
];

/// Synthetic signals plotted next to their nearest real signal.
const SYNTH_EXAMPLES: usize = 3;

pub struct TrainOutput {
    pub report: TrainReport,
    pub checkpoint: Checkpoint,
}

fn train_typed<T: Real>(
    dataset: &Dataset,
    config: &TrainConfig,
    mode: TrainMode,
    mut observer: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutput> {
    let mut t = Trainer::<T>::new(dataset, config, mode)?;
    let report = t.run(|rec, _| observer(rec))?;
    Ok(TrainOutput {
        report,
        checkpoint: t.checkpoint(true)?,
    })
}

/// Trains at the configured precision. Supervised runs ignore the
/// generator loss settings.
pub fn train_any(
    dataset: &Dataset,
    config: &TrainConfig,
    mode: TrainMode,
    observer: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutput> {
    let mut config = config.clone();
    if mode == TrainMode::Supervised {
        config.loss = LossConfig {
            adversarial: config.loss.adversarial,
            ..LossConfig::default()
        };
    }
    match config.precision {
        Precision::F32 => train_typed::<f32>(dataset, &config, mode, observer),
        Precision::F64 => train_typed::<f64>(dataset, &config, mode, observer),
    }
}

/// Epoch records as CSV text with a header row. Missing accuracies are
/// empty fields.
pub fn epochs_csv(records: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EPOCH_HEADER)?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.d_total.to_string(),
            r.supervised.to_string(),
            r.unsupervised.to_string(),
            r.g_total.to_string(),
            r.adv.to_string(),
            r.fm_joint.to_string(),
            r.test_acc.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn series(name: &str, records: &[EpochRecord], f: impl Fn(&EpochRecord) -> Option<f64>) -> Series {
    Series::new(
        name,
        records.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect(),
    )
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    read_dataset(cfg.require_dataset()?)
}

/// Writes a fresh dataset to `config.dataset`, or `out/dataset.slcd`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.spectrum.validate()?;
    let ds = make_dataset(cfg.per_class, cfg.train_frac, &cfg.spectrum, cfg.train.seed)?;
    let path = match &cfg.dataset {
        Some(p) => p.clone(),
        None => cfg.prepare_out()?.join("dataset.slcd"),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_dataset(&ds, &path)?;
    Ok(path)
}

pub struct TrainArtifacts {
    pub csv: PathBuf,
    pub loss_svg: PathBuf,
    pub accuracy_svg: PathBuf,
    pub checkpoint: PathBuf,
    pub report: TrainReport,
}

/// Trains one model and writes `epochs.csv`, `loss.svg`, `accuracy.svg` and
/// `model.ckpt`.
pub fn cmd_train(cfg: &ExperimentConfig, mut progress: impl FnMut(&EpochRecord)) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    let out = cfg.prepare_out()?;
    let result = train_any(&dataset, &cfg.train, cfg.mode, |r| {
        progress(r);
        Ok(())
    })?;
    let records = &result.report.epochs;
    let art = TrainArtifacts {
        csv: out.join("epochs.csv"),
        loss_svg: out.join("loss.svg"),
        accuracy_svg: out.join("accuracy.svg"),
        checkpoint: out.join("model.ckpt"),
        report: result.report.clone(),
    };
    fs::write(&art.csv, epochs_csv(records)?)?;
    let mut losses = vec![
        series("D total", records, |r| Some(r.d_total)),
        series("supervised", records, |r| Some(r.supervised)),
    ];
    if cfg.mode == TrainMode::Wlssgan {
        losses.push(series("unsupervised", records, |r| Some(r.unsupervised)));
        losses.push(series("G total", records, |r| Some(r.g_total)));
    }
    plot_curves(
        &losses,
        &PlotLabels {
            title: format!("Loss curves ({})", cfg.mode),
            x: "epoch".into(),
            y: "loss".into(),
        },
        &art.loss_svg,
    )?;
    let acc = [series("test accuracy", records, |r| r.test_acc)];
    if acc[0].points.is_empty() {
        return Err(Error::Empty("no test accuracy to plot".into()));
    }
    plot_curves(
        &acc,
        &PlotLabels {
            title: format!("Test accuracy ({})", cfg.mode),
            x: "epoch".into(),
            y: "accuracy".into(),
        },
        &art.accuracy_svg,
    )?;
    result.checkpoint.write(&art.checkpoint)?;
    Ok(art)
}

/// Runs the configured sweep grid.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepOutcome>> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    let out = cfg.prepare_out()?;
    Ok(write_sweep(&dataset, &cfg.train, &cfg.sweep, cfg.workers, out)?.0)
}

pub struct SynthArtifacts {
    pub signals: PathBuf,
    pub report_csv: PathBuf,
    pub examples: Vec<PathBuf>,
    pub report: SynthesisReport,
}

fn sample_generator<T: Real>(ck: &Checkpoint, n: usize, seed: u64) -> Result<SignalBatch> {
    let mut g = load_generator::<T>(ck)?;
    g.sample(n, seed)
}

/// Samples the checkpoint's generator and compares it with the real
/// training signals. Writes `synthetic.slcd`, `synthesis.csv` and example
/// plots.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<SynthArtifacts> {
    cfg.validate()?;
    let ck = Checkpoint::read(cfg.require_checkpoint()?)?;
    let real = load_dataset(cfg)?.train();
    let out = cfg.prepare_out()?;
    let synthetic = match cfg.train.precision {
        Precision::F32 => sample_generator::<f32>(&ck, cfg.n_synth, cfg.train.seed)?,
        Precision::F64 => sample_generator::<f64>(&ck, cfg.n_synth, cfg.train.seed)?,
    };
    let report = compare_batches(&synthetic, &real)?;

    let mut file = Dataset::empty(synthetic.signal_len());
    for (s, _) in synthetic.iter() {
        file.push(s, None, Role::Train)?;
    }
    let signals = out.join("synthetic.slcd");
    write_dataset(&file, &signals)?;
    let report_csv = out.join("synthesis.csv");
    report.write_csv(fs::File::create(&report_csv)?)?;

    let n_ex = SYNTH_EXAMPLES.min(synthetic.len());
    let head = synthetic.select(&(0..n_ex).collect::<Vec<_>>());
    let pairs = pair_nearest(&head, &real)?;
    let mut examples = Vec::new();
    for (i, &j) in pairs.iter().enumerate() {
        let trace = |name: &str, s: &[f32]| {
            Series::new(name, s.iter().enumerate().map(|(k, &v)| (k as f64, v as f64)).collect())
        };
        let path = out.join(format!("synth_example_{i}.svg"));
        plot_curves(
            &[trace("synthetic", head.signal(i)), trace("nearest real", real.signal(j))],
            &PlotLabels {
                title: format!("Synthetic sample {i}"),
                x: "Doppler bin".into(),
                y: "normalised amplitude".into(),
            },
            &path,
        )?;
        examples.push(path);
    }
    Ok(SynthArtifacts {
        signals,
        report_csv,
        examples,
        report,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRow {
    pub method: &'static str,
    pub accuracy: f64,
}

/// kNN, logistic regression and self-training on the labeled split.
/// Writes `baselines.csv`.
pub fn cmd_baseline(cfg: &ExperimentConfig) -> Result<Vec<BaselineRow>> {
    cfg.validate()?;
    let mut dataset = load_dataset(cfg)?;
    if let Some(n) = cfg.train.n_lab {
        dataset = split_semisupervised(&dataset, n, cfg.train.seed)?;
    }
    let out = cfg.prepare_out()?;
    let train = dataset.train();
    let test = dataset.test();
    let knn = KnnModel::from_batch(&train, cfg.knn_k)?;
    let logreg = LogRegConfig::default();
    let (lr_model, _) = LogRegModel::from_batch(&train, &logreg)?;
    let st = self_training_baseline(
        &dataset,
        &SelfTrainingConfig {
            logreg,
            threshold: cfg.self_training_threshold,
            ..Default::default()
        },
    )?;
    let rows = vec![
        BaselineRow {
            method: "knn",
            accuracy: knn.accuracy(&test)?,
        },
        BaselineRow {
            method: "logistic_regression",
            accuracy: lr_model.accuracy(&test)?,
        },
        BaselineRow {
            method: "self_training",
            accuracy: st.accuracy,
        },
    ];
    let mut w = csv::Writer::from_path(out.join("baselines.csv"))?;
    w.write_record(["method", "n_lab", "accuracy"])?;
    let n_lab = dataset.labeled_train_indices().len().to_string();
    for r in &rows {
        w.write_record([r.method, n_lab.as_str(), &r.accuracy.to_string()])?;
    }
    w.flush()?;
    Ok(rows)
}

fn eval_typed<T: Real>(ck: &Checkpoint, test: &SignalBatch) -> Result<f64> {
    let mut d = load_discriminator::<T>(ck)?;
    trainer::evaluate(&mut d, test)
}

/// Test accuracy of the checkpoint's discriminator. Writes `eval.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.validate()?;
    let ck = Checkpoint::read(cfg.require_checkpoint()?)?;
    let test = load_dataset(cfg)?.test();
    let out = cfg.prepare_out()?;
    let acc = match cfg.train.precision {
        Precision::F32 => eval_typed::<f32>(&ck, &test)?,
        Precision::F64 => eval_typed::<f64>(&ck, &test)?,
    };
    let mut w = csv::Writer::from_path(out.join("eval.csv"))?;
    w.write_record(["n_test", "accuracy"])?;
    w.write_record([test.len().to_string(), acc.to_string()])?;
    w.flush()?;
    Ok(acc)
}

/// Writes the resolved configuration next to the artifacts.
pub fn write_resolved_config(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let p = out.join("config.txt");
    fs::write(&p, cfg.to_text())?;
    Ok(p)
}
