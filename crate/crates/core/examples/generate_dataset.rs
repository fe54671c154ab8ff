//! Builds the three-class clutter benchmark, prints its composition and
//! peak structure, writes it to disk and plots one spectrum per class.
//!
//! ```text
//! cargo run --release --example generate_dataset -- [per_class] [out_dir]
//! ```

use std::path::PathBuf;

use wlssgan::cli::{plot_curves, PlotLabels, Series};
use wlssgan::synth::{
    make_dataset, prominent_peaks, read_dataset, sample_rng, synth_spectrum, write_dataset, ClutterClass, Role,
    SpectrumParams,
};

fn main() -> wlssgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let per_class = args.first().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let out = PathBuf::from(args.get(1).map_or("out/dataset", String::as_str));
    std::fs::create_dir_all(&out)?;

    let params = SpectrumParams::default();
    let ds = make_dataset(per_class, 0.7, &params, 0)?;
    println!("{} signals of length {}", ds.len(), ds.signals.signal_len());
    for class in ClutterClass::ALL {
        println!(
            "  {:<9} train {:>4}  test {:>4}",
            class.name(),
            ds.count(Role::Train, Some(class)),
            ds.count(Role::Test, Some(class))
        );
    }

    let quiet = params.noiseless();
    let mut series = Vec::new();
    for class in ClutterClass::ALL {
        let s: Vec<f64> = synth_spectrum(class, &quiet, &mut sample_rng(0, 0))?
            .into_iter()
            .map(f64::from)
            .collect();
        println!("  noiseless {:<9} peaks at {:?}", class.name(), prominent_peaks(&s, 0.1));
        let noisy = synth_spectrum(class, &params, &mut sample_rng(0, 1))?;
        series.push(Series::new(
            class.name(),
            noisy.iter().enumerate().map(|(i, &v)| (i as f64, v as f64)).collect(),
        ));
    }

    let path = out.join("dataset.slcd");
    write_dataset(&ds, &path)?;
    assert_eq!(read_dataset(&path)?, ds);
    let plot = out.join("classes.svg");
    plot_curves(
        &series,
        &PlotLabels {
            title: "One spectrum per class".into(),
            x: "Doppler bin".into(),
            y: "normalised amplitude".into(),
        },
        &plot,
    )?;
    println!("wrote {} and {}", path.display(), plot.display());
    Ok(())
}
