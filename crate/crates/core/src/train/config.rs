use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detector::DetTrainOptions;
use super::schedule::{Schedule, DESK_BASE_LR, DESK_DETECTOR_LR};
use super::segmentor::SegTrainOptions;
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::nn::SegMentorConfig;

/// Settings of a segmentor training run, read from JSON. Missing fields
/// take desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentorTrainConfig {
    pub arch: SegMentorConfig,
    pub base_lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub val_count: usize,
    pub options: SegTrainOptions,
}

impl Default for SegmentorTrainConfig {
    fn default() -> Self {
        Self {
            arch: SegMentorConfig::desk(1),
            base_lr: DESK_BASE_LR,
            batch_size: 8,
            seed: 0,
            val_count: 50,
            options: SegTrainOptions::default(),
        }
    }
}

impl SegmentorTrainConfig {
    /// Schedule from the compact stage list, or the desk default for the
    /// configured hourglass count.
    pub fn schedule(&self, stages: Option<&str>, checkpoint_dir: &Path) -> Result<Schedule> {
        let mut s = Schedule::segmentor_desk(self.arch.hourglass_count);
        s.stages = match stages {
            Some(spec) => Schedule::parse_stages(spec, self.base_lr)?,
            None => Schedule::segmentor(self.arch.hourglass_count, 5, 5, 15, self.base_lr).stages,
        };
        s.batch_size = self.batch_size;
        s.seed = self.seed;
        s.checkpoint_dir = checkpoint_dir.to_path_buf();
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorTrainConfig {
    pub arch: DetectorConfig,
    pub rpn_epochs: usize,
    pub rcnn_epochs: usize,
    pub joint_epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub val_count: usize,
    pub options: DetTrainOptions,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        let d = Schedule::detector_desk();
        let epochs = |k| d.stages.iter().find(|s| s.kind == k).map_or(0, |s| s.epochs);
        Self {
            arch: DetectorConfig::desk(),
            rpn_epochs: epochs(super::StageKind::RpnOnly),
            rcnn_epochs: epochs(super::StageKind::RcnnOnly),
            joint_epochs: epochs(super::StageKind::DetJoint),
            lr: DESK_DETECTOR_LR,
            batch_size: 8,
            seed: 0,
            val_count: 50,
            options: DetTrainOptions::default(),
        }
    }
}

impl DetectorTrainConfig {
    pub fn schedule(&self, checkpoint_dir: &Path) -> Schedule {
        let mut s = Schedule::detector(self.rpn_epochs, self.rcnn_epochs, self.joint_epochs, self.lr);
        s.batch_size = self.batch_size;
        s.seed = self.seed;
        s.checkpoint_dir = checkpoint_dir.to_path_buf();
        s
    }
}

/// Reads a JSON config file, or returns the default when `path` is `None`.
pub fn read_config<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}
