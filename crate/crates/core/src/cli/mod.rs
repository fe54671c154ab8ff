//! Configuration, commands, sweeps and plotting behind the `wlssgan` binary.

pub mod commands;
pub mod config;
pub mod plot;
pub mod sweep;

pub use commands::{cmd_baseline, cmd_eval, cmd_gen_data, cmd_synth, cmd_sweep, cmd_train};
pub use config::ExperimentConfig;
pub use plot::{plot_curves, render_svg, PlotLabels, Series};
pub use sweep::SweepGrid;
