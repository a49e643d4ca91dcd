//! Pose estimation with a waterfall atrous feature extractor, built from
//! scratch on a small reverse-mode tensor engine.
//!
//! The crate covers the whole loop: synthetic figure datasets, heatmap
//! encoding, a dilated-convolution backbone with a waterfall multi-rate
//! context module, a bilinear decoder, an optional convolutional LSTM for
//! video, SGD training, and the standard keypoint metrics (PCK, PCKh, PCP,
//! box containment). Everything runs on one CPU core in `f32`; the same
//! generic code instantiates in `f64` for finite-difference gradient checks.
//!
//! Start with the `examples/` directory; each example exercises one major
//! capability end to end.

pub mod arch;
pub mod cli;
pub mod heatmap;
pub mod keypoints;
pub mod metrics;
pub mod error;
pub mod model;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod wasp;

pub use error::{Error, ErrorCategory, Result};
