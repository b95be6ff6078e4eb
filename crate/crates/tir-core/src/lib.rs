//! Thermal-infrared (TIR) image enhancement toolkit.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`degrade`]: the composed TIR degradation model (low contrast, blur,
//!   fixed-pattern noise, additive random noise) with gated sampling and
//!   single/composite sequence generation,
//! - [`prompt`]: dual prompt banks, lightweight prompt encoders, prompt
//!   fusion, and channel-wise feature modulation, packaged as a
//!   plug-and-play wrapper over restoration backbones,
//! - [`backbone`]: a small convolutional encoder-decoder reference
//!   backbone exposing the injection-site contract,
//! - [`trainer`]: selective progressive training with per-iteration
//!   gradient accumulation and a single optimizer update per batch,
//! - [`metrics`] and [`eval`]: PSNR/SSIM, test-subset construction,
//!   reporting, and the iteration/prompt/order ablation runners.
//!
//! Everything is deterministic given the configured seeds: corpora,
//! training runs, and evaluation reports reproduce bit-exactly.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod degrade;
pub mod error;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod prompt;
pub mod trainer;

pub use error::{Error, Result};
pub use image::Image;
