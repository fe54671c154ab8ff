use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wlssgan::cli::commands::write_resolved_config;
use wlssgan::cli::{cmd_baseline, cmd_eval, cmd_gen_data, cmd_sweep, cmd_synth, cmd_train, sweep, ExperimentConfig};

#[derive(Parser)]
#[command(name = "wlssgan", version, about = "Semi-supervised GAN clutter classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clutter dataset.
    GenData(Shared),
    /// Train one model and write epoch CSV, curves and a checkpoint.
    Train(Shared),
    /// Train over a grid of settings and write aggregate tables.
    Sweep(Shared),
    /// Sample a trained generator and score it against real signals.
    Synth(Shared),
    /// Run the kNN, logistic regression and self-training baselines.
    Baseline(Shared),
    /// Test accuracy of a trained discriminator.
    Eval(Shared),
}

#[derive(Args)]
struct Shared {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated feature layers, e.g. 1,2,3.
    #[arg(long)]
    lmul: Option<String>,
    #[arg(long)]
    nlab: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// wlssgan or supervised.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    n_synth: Option<usize>,
    /// Parallel sweep runs.
    #[arg(long)]
    workers: Option<usize>,
    /// Any configuration key, repeatable: --set noise_floor=0.1
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Shared {
    fn overrides(&self) -> Result<Vec<(String, String)>, String> {
        let mut v: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, val: Option<String>| {
            if let Some(val) = val {
                v.push((k.to_string(), val));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("seed", self.seed.map(|x| x.to_string()));
        put("out", path(&self.out));
        put("precision", self.precision.clone());
        put("dataset", path(&self.dataset));
        put("checkpoint", path(&self.checkpoint));
        put("alpha", self.alpha.map(|x| x.to_string()));
        put("beta", self.beta.map(|x| x.to_string()));
        put("lmul", self.lmul.clone());
        put("nlab", self.nlab.map(|x| x.to_string()));
        put("epochs", self.epochs.map(|x| x.to_string()));
        put("batch_size", self.batch_size.map(|x| x.to_string()));
        put("lr", self.lr.map(|x| x.to_string()));
        put("mode", self.mode.clone());
        put("per_class", self.per_class.map(|x| x.to_string()));
        put("n_synth", self.n_synth.map(|x| x.to_string()));
        put("workers", self.workers.map(|x| x.to_string()));
        for kv in &self.set {
            let (k, val) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            v.push((k.trim().to_string(), val.trim().to_string()));
        }
        Ok(v)
    }

    fn resolve(&self) -> Result<ExperimentConfig, String> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides()?).map_err(|e| e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), String> {
    let err = |e: wlssgan::Error| e.to_string();
    match cli.command {
        Command::GenData(s) => {
            let cfg = s.resolve()?;
            let path = cmd_gen_data(&cfg).map_err(err)?;
            println!("wrote {}", path.display());
        }
        Command::Train(s) => {
            let cfg = s.resolve()?;
            let art = cmd_train(&cfg, |r| {
                eprintln!(
                    "epoch {:>5}  d {:.4}  g {:.4}  acc {}",
                    r.epoch,
                    r.d_total,
                    r.g_total,
                    r.test_acc.map_or("-".into(), |a| format!("{a:.4}"))
                )
            })
            .map_err(err)?;
            write_resolved_config(&cfg, &cfg.out).map_err(err)?;
            if let Some(a) = art.report.steady_state_accuracy {
                println!("steady-state accuracy {a:.4}");
            }
            println!("wrote {} and {}", art.csv.display(), art.checkpoint.display());
        }
        Command::Sweep(s) => {
            let cfg = s.resolve()?;
            eprintln!("sweep: {}", sweep::describe(&cfg.sweep));
            let outcomes = cmd_sweep(&cfg).map_err(err)?;
            println!("{} runs written to {}", outcomes.len(), cfg.out.display());
        }
        Command::Synth(s) => {
            let cfg = s.resolve()?;
            let art = cmd_synth(&cfg).map_err(err)?;
            let r = art.report;
            println!("n_pairs {}  AD {:.4}  CS {:.4}  PCC {:.4}", r.n_pairs, r.ad, r.cs, r.pcc);
            println!("wrote {}", art.signals.display());
        }
        Command::Baseline(s) => {
            let cfg = s.resolve()?;
            for row in cmd_baseline(&cfg).map_err(err)? {
                println!("{:<20} {:.4}", row.method, row.accuracy);
            }
        }
        Command::Eval(s) => {
            let cfg = s.resolve()?;
            println!("accuracy {:.4}", cmd_eval(&cfg).map_err(err)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
