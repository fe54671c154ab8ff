//! A small grid over loss weights, feature layer sets and labeled counts,
//! summarised as a table of mean steady-state accuracies.
//!
//! ```text
//! cargo run --release --example sweep_grid -- [epochs] [workers]
//! ```

use wlssgan::cli::sweep::{describe, run_jobs, table_csv};
use wlssgan::cli::SweepGrid;
use wlssgan::losses::LayerSet;
use wlssgan::synth::{make_dataset, SpectrumParams};
use wlssgan::trainer::TrainConfig;

fn main() -> wlssgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|s| s.parse().ok()).unwrap_or(10);
    let workers = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);

    let dataset = make_dataset(200, 0.7, &SpectrumParams::default(), 0)?;
    let grid = SweepGrid {
        alpha_beta: vec![(1.0, 0.0), (0.7, 0.3), (0.0, 1.0)],
        l_mul: vec![LayerSet::prefix(1)?, LayerSet::all()],
        n_lab: vec![30, 90],
        seeds: 1,
        include_supervised: true,
    };
    println!("{}", describe(&grid));
    let base = TrainConfig {
        epochs,
        ..Default::default()
    };
    let outcomes = run_jobs(&dataset, &base, &grid.jobs(0), workers)?;
    print!("{}", table_csv(&outcomes, &grid)?);
    Ok(())
}
