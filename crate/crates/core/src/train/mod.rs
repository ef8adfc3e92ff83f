//! Staged training of the segmentor and the detector.

mod config;
mod detector;
mod engine;
mod schedule;
mod segmentor;

pub use config::{read_config, DetectorTrainConfig, SegmentorTrainConfig};
pub use detector::{prepare_examples, proposal_recall, single_detection_rate, train_detector, DetExample, DetTrainOptions};
pub use engine::{
    apply_freeze, backward_step, run_stages, Accumulator, EpochRecord, EpochStats, StageReport, Trainable,
    TrainingReport,
};
pub use schedule::{
    default_frozen, Schedule, StageKind, TrainStage, AE_LR_FACTOR, DESK_BASE_LR, DESK_DETECTOR_LR, HG_LR_FACTOR,
    FULL_BASE_LR, FULL_DETECTOR_LR,
};
pub use segmentor::{run_segmentor_schedule, training_example, validation_box, validation_dice, CropSource, SegTrainOptions};
