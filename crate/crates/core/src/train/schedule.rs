use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StageKind {
    /// Encoder and decoder only, no hourglass modules.
    AeOnly,
    /// Hourglass `k` (1-based) alone; grows the model if needed.
    HgOnly(usize),
    EndToEnd,
    RpnOnly,
    RcnnOnly,
    DetJoint,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageKind::AeOnly => f.write_str("AE_ONLY"),
            StageKind::HgOnly(k) => write!(f, "HG_{k}_ONLY"),
            StageKind::EndToEnd => f.write_str("END_TO_END"),
            StageKind::RpnOnly => f.write_str("RPN_ONLY"),
            StageKind::RcnnOnly => f.write_str("RCNN_ONLY"),
            StageKind::DetJoint => f.write_str("DET_JOINT"),
        }
    }
}

impl FromStr for StageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "AE_ONLY" => StageKind::AeOnly,
            "END_TO_END" => StageKind::EndToEnd,
            "RPN_ONLY" => StageKind::RpnOnly,
            "RCNN_ONLY" => StageKind::RcnnOnly,
            "DET_JOINT" => StageKind::DetJoint,
            _ => {
                let k = s
                    .strip_prefix("HG_")
                    .and_then(|r| r.strip_suffix("_ONLY"))
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))?;
                StageKind::HgOnly(k)
            }
        })
    }
}

impl Serialize for StageKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StageKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl StageKind {
    pub fn is_detector(&self) -> bool {
        matches!(self, StageKind::RpnOnly | StageKind::RcnnOnly | StageKind::DetJoint)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStage {
    #[serde(rename = "name")]
    pub kind: StageKind,
    pub epochs: usize,
    pub lr: f32,
    pub frozen_prefixes: Vec<String>,
}

impl TrainStage {
    pub fn new(kind: StageKind, epochs: usize, lr: f32) -> Self {
        Self { kind, epochs, lr, frozen_prefixes: default_frozen(kind) }
    }
}

/// Namespaces held fixed by each stage kind.
pub fn default_frozen(kind: StageKind) -> Vec<String> {
    let v: Vec<String> = match kind {
        StageKind::AeOnly | StageKind::EndToEnd | StageKind::DetJoint => Vec::new(),
        StageKind::HgOnly(k) => ["encoder.".to_string(), "decoder.".to_string()]
            .into_iter()
            .chain((0..k - 1).map(|j| format!("hourglass.{j}.")))
            .collect(),
        StageKind::RpnOnly => vec!["rcnn.".into()],
        StageKind::RcnnOnly => vec!["backbone.".into(), "rpn.".into()],
    };
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub stages: Vec<TrainStage>,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

/// Learning rate multipliers of the staged segmentor schedule relative to
/// the base rate.
pub const AE_LR_FACTOR: f32 = 0.5;
pub const HG_LR_FACTOR: f32 = 2.0;

pub const FULL_BASE_LR: f32 = 2e-4;
pub const DESK_BASE_LR: f32 = 2e-3;
pub const FULL_DETECTOR_LR: f32 = 1e-5;
pub const DESK_DETECTOR_LR: f32 = 1e-3;

impl Schedule {
    /// AE_ONLY, one HG_k_ONLY per hourglass, then END_TO_END.
    pub fn segmentor(hourglasses: usize, ae_epochs: usize, hg_epochs: usize, e2e_epochs: usize, base_lr: f32) -> Self {
        let mut stages = vec![TrainStage::new(StageKind::AeOnly, ae_epochs, AE_LR_FACTOR * base_lr)];
        for k in 1..=hourglasses {
            stages.push(TrainStage::new(StageKind::HgOnly(k), hg_epochs, HG_LR_FACTOR * base_lr));
        }
        stages.push(TrainStage::new(StageKind::EndToEnd, e2e_epochs, base_lr));
        Self { stages, batch_size: 8, seed: 0, checkpoint_dir: PathBuf::from("checkpoints") }
    }

    /// 20 / 20 per hourglass / 90 epochs at base rate 2e-4.
    pub fn segmentor_full(hourglasses: usize) -> Self {
        Self::segmentor(hourglasses, 20, 20, 90, FULL_BASE_LR)
    }

    /// 5 / 5 per hourglass / 15 epochs.
    pub fn segmentor_desk(hourglasses: usize) -> Self {
        Self::segmentor(hourglasses, 5, 5, 15, DESK_BASE_LR)
    }

    pub fn detector(rpn_epochs: usize, rcnn_epochs: usize, joint_epochs: usize, lr: f32) -> Self {
        let stages = [
            (StageKind::RpnOnly, rpn_epochs),
            (StageKind::RcnnOnly, rcnn_epochs),
            (StageKind::DetJoint, joint_epochs),
        ]
        .into_iter()
        .filter(|&(_, e)| e > 0)
        .map(|(k, e)| TrainStage::new(k, e, lr))
        .collect();
        Self { stages, batch_size: 8, seed: 0, checkpoint_dir: PathBuf::from("checkpoints") }
    }

    pub fn detector_desk() -> Self {
        Self::detector(12, 8, 4, DESK_DETECTOR_LR)
    }

    /// Parses the compact form `AE_ONLY:5,HG_1_ONLY:5,END_TO_END:15` with
    /// rates relative to `base_lr` and default frozen namespaces.
    pub fn parse_stages(spec: &str, base_lr: f32) -> Result<Vec<TrainStage>> {
        spec.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|item| {
                let (name, epochs) = item
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("stage {item:?} must look like NAME:EPOCHS")))?;
                let kind: StageKind = name.parse()?;
                let epochs: usize = epochs
                    .parse()
                    .map_err(|_| Error::Config(format!("bad epoch count in {item:?}")))?;
                let factor = match kind {
                    StageKind::AeOnly => AE_LR_FACTOR,
                    StageKind::HgOnly(_) => HG_LR_FACTOR,
                    _ => 1.0,
                };
                Ok(TrainStage::new(kind, epochs, factor * base_lr))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("schedule has no stages".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        for st in &self.stages {
            if !(st.lr > 0.0 && st.lr.is_finite()) {
                return Err(Error::Config(format!("stage {} has learning rate {}", st.kind, st.lr)));
            }
        }
        let det = self.stages[0].kind.is_detector();
        if self.stages.iter().any(|s| s.kind.is_detector() != det) {
            return Err(Error::Config("a schedule cannot mix detector and segmentor stages".into()));
        }
        Ok(())
    }
}
