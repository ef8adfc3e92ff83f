//! Layers and the segmentation network.

mod hourglass;
mod layers;
mod segmentor;

pub use hourglass::{Hourglass, ResidualBlock};
pub use layers::{BatchNorm2d, Conv2d, ConvBn};
pub use segmentor::{BottleneckTrace, SegMentorConfig, Segmentor, ENCODER_STAGES};
