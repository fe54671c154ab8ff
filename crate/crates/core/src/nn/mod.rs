//! Dense tensors, reverse-mode differentiation, the layer set used by the
//! generator and discriminator, Adam, and a finite-difference checker.

mod adam;
pub(crate) mod conv;
mod gradcheck;
mod layers;
mod ops;
mod real;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::ConvGeometry;
pub use gradcheck::{grad_check, relative_error, CoordCheck, GradCheckConfig, GradCheckReport, Parameterized};
pub use layers::{shape_table, ForwardCtx, InitScheme, Layer, LayerSpec, NetOutput, Network};
pub use ops::{Activation, BatchNormStats, Mode, NormMode};
pub use real::Real;
pub use tape::{Backward, BackwardCtx, Gradients, Tape, Var};
pub use tensor::Tensor;
