//! Synthesis metrics (AD, CS, PCC) of an untrained generator, uniform noise
//! and a replay of real signals, all scored against the same training set.
//!
//! ```text
//! cargo run --release --example synthesis_quality -- [n_synth] [seed]
//! ```

use wlssgan::eval::{synthesis_report, NoiseSource, Replayer, SignalSource};
use wlssgan::models::Generator;
use wlssgan::synth::{make_dataset, SpectrumParams, SIGNAL_LEN};

fn main() -> wlssgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_synth = args.first().and_then(|s| s.parse().ok()).unwrap_or(300);
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);

    let real = make_dataset(1000, 0.7, &SpectrumParams::default(), seed)?.train();
    let mut sources: Vec<(&str, Box<dyn SignalSource>)> = vec![
        ("untrained generator", Box::new(Generator::<f32>::new(100, seed)?)),
        ("uniform noise", Box::new(NoiseSource { signal_len: SIGNAL_LEN })),
        ("real replay", Box::new(Replayer::new(real.clone())?)),
    ];
    println!("{:<22} {:>8} {:>8} {:>8}", "source", "AD", "CS", "PCC");
    for (name, src) in sources.iter_mut() {
        let r = synthesis_report(src.as_mut(), &real, n_synth, seed)?;
        println!("{name:<22} {:>8.4} {:>8.4} {:>8.4}", r.ad, r.cs, r.pcc);
    }
    Ok(())
}
