//! Semi-supervised GAN training for 1-D clutter spectrum classification.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod nn;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
