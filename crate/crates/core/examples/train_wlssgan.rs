//! Trains the semi-supervised GAN with a chosen loss weighting and feature
//! layer set, then writes per-epoch losses, curves and a checkpoint.
//!
//! ```text
//! cargo run --release --example train_wlssgan -- [epochs] [alpha] [layers] [n_lab] [out_dir]
//! cargo run --release --example train_wlssgan -- 20 0.7 1,2,3,4,5,6,7 30 out/train
//! ```

use std::path::PathBuf;

use wlssgan::cli::commands::epochs_csv;
use wlssgan::cli::{plot_curves, PlotLabels, Series};
use wlssgan::losses::{LayerSet, LossConfig};
use wlssgan::synth::{make_dataset, SpectrumParams};
use wlssgan::trainer::{TrainConfig, TrainMode, Trainer};

fn main() -> wlssgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|s| s.parse().ok()).unwrap_or(10);
    let alpha: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.7);
    let layers: LayerSet = args.get(2).map_or("1,2,3,4,5,6,7", String::as_str).parse()?;
    let n_lab = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(30);
    let out = PathBuf::from(args.get(4).map_or("out/train", String::as_str));
    std::fs::create_dir_all(&out)?;

    let dataset = make_dataset(1000, 0.7, &SpectrumParams::default(), 0)?;
    let config = TrainConfig {
        epochs,
        n_lab: Some(n_lab),
        loss: LossConfig::new(alpha, 1.0 - alpha, layers)?,
        ..Default::default()
    };
    let mut trainer = Trainer::<f32>::new(&dataset, &config, TrainMode::Wlssgan)?;
    println!(
        "{} labeled of {} training signals, {} iterations per epoch",
        trainer.dataset().labeled_train_indices().len(),
        trainer.dataset().indices(wlssgan::synth::Role::Train).len(),
        trainer.iterations_per_epoch()
    );
    let report = trainer.run(|rec, _| {
        println!(
            "epoch {:>4}  L_D {:.4}  L_G {:.4} (adv {:.4}, fm {:.4})  acc {:.4}",
            rec.epoch,
            rec.d_total,
            rec.g_total,
            rec.adv,
            rec.fm_joint,
            rec.test_acc.unwrap_or(f64::NAN)
        );
        Ok(())
    })?;

    std::fs::write(out.join("epochs.csv"), epochs_csv(&report.epochs)?)?;
    let curve = |name: &str, f: fn(&wlssgan::trainer::EpochRecord) -> f64| {
        Series::new(name, report.epochs.iter().map(|r| (r.epoch as f64, f(r))).collect())
    };
    plot_curves(
        &[curve("discriminator", |r| r.d_total), curve("generator", |r| r.g_total)],
        &PlotLabels {
            title: format!("alpha {alpha}, layers {layers}"),
            x: "epoch".into(),
            y: "loss".into(),
        },
        out.join("loss.svg"),
    )?;
    trainer.checkpoint(true)?.write(out.join("model.ckpt"))?;
    println!(
        "steady-state accuracy {:.4}; artifacts in {}",
        report.steady_state_accuracy.unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}
