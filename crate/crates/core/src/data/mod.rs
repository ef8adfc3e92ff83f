//! Manifests, image and mask decoding, augmentation, crop geometry and the
//! synthetic dataset generator.

mod augment;
mod crop;
mod manifest;
mod resample;
mod synth;

pub use augment::{apply_op, apply_ops, augment, sample_ops, AugmentConfig, AugmentOp};
pub use crop::{crop_and_normalize, crop_mask, restore_mask, CropTransform};
pub use manifest::{
    load_all, load_image, load_mask, load_sample, read_manifest, rgb_to_tensor, save_mask_png, split,
    tensor_to_mask, tensor_to_rgb, write_manifest, Sample, SampleRecord,
};
pub use resample::{resize_bilinear, resize_nearest};
pub use synth::{synth_dataset, synth_sample, SynthConfig, SynthSample};
