//! Small numerical kernel: parameter sets, feature grids, layer kernels with
//! exact backward passes, counter-based RNG, Adam, EMA transfer, gradient
//! checking and the binary checkpoint format.

mod adam;
pub mod checkpoint;
mod ema;
mod gradcheck;
mod grid;
pub mod layers;
mod param;
mod rng;
mod scalar;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use ema::ema_update;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use grid::Grid;
pub use layers::{conv2d, dense, dropout, relu, sigmoid, DropoutMask};
pub use param::{Param, ParamSet};
pub use rng::{mix64, RngStream};
pub use scalar::Scalar;
