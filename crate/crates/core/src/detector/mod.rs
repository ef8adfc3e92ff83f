//! Lesion localization: a small convolutional backbone, a region proposal
//! head over anchors and a per-proposal refinement head.

pub mod geometry;
mod losses;
mod model;

pub use geometry::{
    assign_anchors, decode_box, encode_box, generate_anchors, iou, mask_to_bbox, nms, nms_indices, AnchorAssignment,
    AnchorConfig, AnchorLabel, BBox, BoxDelta, MAX_LOG_SCALE,
};
pub use losses::{rcnn_losses, rpn_losses, subsample_labels, RCNN_DELTA_STD};
pub use model::{Detector, DetectorConfig, TrunkOutput};
