//! Minimal neural-network primitives with explicit backward passes.
//!
//! All parameters of a model live in one flat `Vec<f64>`; layers hold
//! index ranges into it. Gradients use an identically shaped flat
//! vector, which keeps the optimizer, checkpointing, and the
//! finite-difference test oracles trivial.

pub mod conv;
pub mod linear;
pub mod ops;
pub mod params;

pub use conv::{Conv2d, ConvCache};
pub use linear::Linear;
pub use params::{LayoutBuilder, ParamRange};

/// Channel-first feature map (C, H, W).
pub type Feature = ndarray::Array3<f64>;
