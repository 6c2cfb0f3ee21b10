pub mod adapt;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod nnkit;
pub mod pipeline;
pub mod scenegen;

pub use error::{Error, Result};

/// Scalar used by the pipeline; the kernel and network also run in `f32`.
pub type Real = f64;
