//! Dense f32 tensors, reverse-mode autograd and the layer kernels built on it.

mod autograd;
mod conv;
pub mod loss;
mod norm;
pub mod ops;
mod pool;
mod roi;

pub use autograd::{grad_enabled, no_grad, Tensor};
pub use conv::conv2d;
pub use norm::{batchnorm2d, BatchNormStats, Mode, BN_EPSILON, BN_MOMENTUM};
pub use pool::{maxpool2d, maxpool2d_with_indices, upsample2x};
pub use roi::{roi_crop_resize, Roi};
