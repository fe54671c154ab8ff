//! Finite-difference verification of a small convolutional classifier built
//! from the same layer set as the discriminator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wlssgan::losses::supervised_loss;
use wlssgan::nn::{grad_check, ForwardCtx, GradCheckConfig, InitScheme, LayerSpec, Mode, Network, Tape, Tensor};

fn main() -> wlssgan::Result<()> {
    let specs = vec![
        LayerSpec::Conv1d {
            in_channels: 1,
            out_channels: 4,
            kernel: 4,
            stride: 2,
            padding: 1,
        },
        LayerSpec::BatchNorm1d { channels: 4 },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Flatten,
        LayerSpec::FullyConnected { inputs: 32, outputs: 4 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::<f64>::build(specs, &[1, 16], InitScheme { std: 0.3 }, &mut rng)?;
    let x: Vec<f64> = (0..3 * 16).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect();
    let x = Tensor::new(&[3, 1, 16], x)?;
    let labels = [0, 2, 1];

    let report = grad_check(
        &mut net,
        |net: &mut Network<f64>, tape: &mut Tape<f64>| {
            let mut r = ChaCha8Rng::seed_from_u64(1);
            let mut ctx = ForwardCtx {
                mode: Mode::Train,
                update_running: false,
                track_params: true,
                rng: &mut r,
            };
            let xv = tape.input(x.clone())?;
            let out = net.forward(tape, xv, &mut ctx)?;
            Ok((supervised_loss(tape, out.output, &labels)?, out.bindings))
        },
        &GradCheckConfig::default(),
    )?;
    println!(
        "{} coordinates checked, max relative error {:.2e}, {} failures, {} kinks: {}",
        report.checked,
        report.max_rel_error,
        report.failures.len(),
        report.kinks.len(),
        if report.passed() { "passed" } else { "FAILED" }
    );
    Ok(())
}
