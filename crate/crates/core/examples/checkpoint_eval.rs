//! Trains briefly, saves a checkpoint, restores both networks and checks
//! that the restored discriminator scores the same and the restored
//! generator samples the same signals.

use wlssgan::checkpoint::{load_discriminator, load_generator, Checkpoint};
use wlssgan::eval::SignalSource;
use wlssgan::synth::{make_dataset, SpectrumParams};
use wlssgan::trainer::{evaluate, TrainConfig, TrainMode, Trainer};

fn main() -> wlssgan::Result<()> {
    let dataset = make_dataset(100, 0.7, &SpectrumParams::default(), 0)?;
    let config = TrainConfig {
        epochs: 2,
        batch_size: 16,
        n_lab: Some(30),
        ..Default::default()
    };
    let mut trainer = Trainer::<f32>::new(&dataset, &config, TrainMode::Wlssgan)?;
    trainer.run(|_, _| Ok(()))?;
    let before = trainer.evaluate()?.unwrap_or(f64::NAN);

    let dir = std::env::temp_dir().join("wlssgan_checkpoint_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    trainer.checkpoint(true)?.write(&path)?;
    let ck = Checkpoint::read(&path)?;

    let mut d = load_discriminator::<f32>(&ck)?;
    let after = evaluate(&mut d, &dataset.test())?;
    println!("test accuracy before saving {before:.4}, after loading {after:.4}");

    let mut g = load_generator::<f32>(&ck)?;
    let mut original = trainer.generator.take().expect("semi-supervised trainer has a generator");
    let same = g.sample(4, 9)? == original.sample(4, 9)?;
    println!("restored generator reproduces samples: {same}");
    println!("checkpoint at {}", path.display());
    Ok(())
}
