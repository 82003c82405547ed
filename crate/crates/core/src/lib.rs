//! Occlusion-stratified panoptic benchmarking.
//!
//! - [`scenegen`]: synthetic scenes with exact per-instance occlusion rates
//! - [`pandata`]: COCO panoptic datasets plus the occlusion sidecar
//! - [`paneval`]: PQ / AP / mIoU, overall and per occlusion level
//! - [`occlcon`]: occlusion-level contrastive embedding loss
//! - [`trainhar`]: a small panoptic model trained with or without that loss
//! - [`cli`]: the `occlbench` command implementations

pub mod cli;
pub mod error;
pub mod occlcon;
pub mod pandata;
pub mod paneval;
pub mod provenance;
pub mod scenegen;
pub mod trainhar;

pub use error::{Error, Result};
