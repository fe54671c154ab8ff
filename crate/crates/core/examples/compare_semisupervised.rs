//! Semi-supervised GAN training against a supervised-only classifier with
//! the same labeled budget.
//!
//! ```text
//! cargo run --release --example compare_semisupervised -- [epochs] [n_lab] [seed]
//! ```

use wlssgan::synth::{make_dataset, SpectrumParams};
use wlssgan::trainer::{TrainConfig, TrainMode, Trainer};

fn main() -> wlssgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let epochs = arg(0, 20) as usize;
    let n_lab = arg(1, 30) as usize;
    let seed = arg(2, 0);

    let dataset = make_dataset(1000, 0.7, &SpectrumParams::default(), seed)?;
    let config = TrainConfig {
        epochs,
        n_lab: Some(n_lab),
        seed,
        ..Default::default()
    };

    for mode in [TrainMode::Supervised, TrainMode::Wlssgan] {
        let mut trainer = Trainer::<f32>::new(&dataset, &config, mode)?;
        let report = trainer.run(|rec, _| {
            println!(
                "{mode} epoch {:>4}  d {:.4}  g {:.4}  acc {:.4}",
                rec.epoch,
                rec.d_total,
                rec.g_total,
                rec.test_acc.unwrap_or(f64::NAN)
            );
            Ok(())
        })?;
        println!(
            "{mode}: steady-state accuracy {:.4} ({:.1} s)",
            report.steady_state_accuracy.unwrap_or(f64::NAN),
            report.wall_clock_secs
        );
    }
    Ok(())
}
