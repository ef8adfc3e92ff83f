//! Two-stage skin-lesion segmentation.
//!
//! A region-proposal detector localizes the lesion, the crop is padded or
//! resized to a fixed square, and a UNet whose bottleneck carries a chain of
//! hourglass modules produces the mask, which is mapped back onto the
//! original image. Everything runs on a small reverse-mode autograd engine
//! over dense f32 tensors.

pub mod ablation;
pub mod checkpoint;
pub mod data;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod param;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
