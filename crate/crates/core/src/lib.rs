//! Multitask anchor-free perception engine.
//!
//! One shared convolutional backbone feeds any subset of three heads: center
//! heatmap object detection, semantic segmentation and keypoint pose
//! estimation. The crate carries everything needed to train and measure such
//! a network on the CPU:
//!
//! - [`tensor`]: NCHW tensors and a reverse-mode autodiff tape
//! - [`model`]: backbone/head configuration, construction, parameter counts, weight files
//! - [`codec`]: annotation ↔ heatmap target encoding and prediction decoding
//! - [`losses`]: focal, L1 and cross-entropy terms and their weighted total
//! - [`metrics`]: box AP/mAP, segmentation mIoU, keypoint PCK
//! - [`synth`]: deterministic synthetic scenes and annotation I/O
//! - [`train`]: optimization loop and evaluation
//! - [`bench`]: latency and parameter comparison of multitask vs single-task networks

pub mod bench;
pub mod checks;
pub mod codec;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
