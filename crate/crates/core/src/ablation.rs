//! Hourglass-count ablation with and without the detector in front.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{split, Sample};
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::metrics::{format_header, format_row, Metrics};
use crate::nn::{SegMentorConfig, Segmentor};
use crate::pipeline::{Fallback, Pipeline, PipelineConfig};
use crate::train::{
    run_segmentor_schedule, train_detector, CropSource, DetectorTrainConfig, Schedule, SegTrainOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorUse {
    With,
    Without,
    Both,
}

impl DetectorUse {
    fn variants(self) -> Vec<bool> {
        match self {
            DetectorUse::With => vec![true],
            DetectorUse::Without => vec![false],
            DetectorUse::Both => vec![true, false],
        }
    }
}

impl std::str::FromStr for DetectorUse {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with" => Ok(DetectorUse::With),
            "without" => Ok(DetectorUse::Without),
            "both" => Ok(DetectorUse::Both),
            _ => Err(Error::Config(format!("--with-detector must be with, without or both, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub hourglass_counts: Vec<usize>,
    pub detector_use: DetectorUse,
    pub seeds: Vec<u64>,
    pub val_count: usize,
    /// Architecture template; the hourglass count is overridden per row.
    pub arch: SegMentorConfig,
    pub ae_epochs: usize,
    pub hg_epochs: usize,
    pub e2e_epochs: usize,
    pub base_lr: f32,
    pub batch_size: usize,
    pub detector: DetectorTrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            hourglass_counts: vec![0, 1, 2, 3],
            detector_use: DetectorUse::Both,
            seeds: vec![0, 1, 2],
            val_count: 50,
            arch: SegMentorConfig::desk(0),
            ae_epochs: 5,
            hg_epochs: 5,
            e2e_epochs: 15,
            base_lr: crate::train::DESK_BASE_LR,
            batch_size: 8,
            detector: DetectorTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub hourglasses: usize,
    pub with_detector: bool,
    /// Per-metric median over seeds.
    pub median: Metrics,
    pub per_seed: Vec<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut s = format_header("Method");
        for r in &self.rows {
            s.push_str(&format_row(&r.label, &r.median));
        }
        s
    }

    pub fn row(&self, hourglasses: usize, with_detector: bool) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.hourglasses == hourglasses && r.with_detector == with_detector)
    }
}

pub fn row_label(hourglasses: usize, with_detector: bool) -> String {
    let net = if hourglasses == 0 { "UNet".to_string() } else { format!("UNet+{hourglasses}HG") };
    if with_detector {
        format!("Detector + {net}")
    } else {
        net
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn median_metrics(rows: &[Metrics]) -> Metrics {
    let col = |f: fn(&Metrics) -> f64| median(rows.iter().map(f).collect());
    Metrics {
        accuracy: col(|m| m.accuracy),
        dice: col(|m| m.dice),
        jaccard: col(|m| m.jaccard),
        sensitivity: col(|m| m.sensitivity),
        specificity: col(|m| m.specificity),
    }
}

/// Trains one detector per seed and one segmentor per (seed, hourglass
/// count, variant), evaluating each on that seed's held-out split.
/// Segmentors behind the detector train on box crops; the others train and
/// run on whole images.
pub fn run_ablation(samples: &[Sample], cfg: &AblationConfig, work_dir: &Path) -> Result<AblationTable> {
    if cfg.seeds.is_empty() || cfg.hourglass_counts.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one hourglass count".into()));
    }
    let variants = cfg.detector_use.variants();
    let mut results: Vec<Vec<Metrics>> = vec![Vec::new(); cfg.hourglass_counts.len() * variants.len()];
    for &seed in &cfg.seeds {
        let (train, val) = split(samples, cfg.val_count, seed)?;
        let seed_dir = work_dir.join(format!("seed{seed}"));
        let detector = if variants.contains(&true) {
            let mut dc = cfg.detector.clone();
            dc.seed = seed;
            let mut det = Detector::new(dc.arch.clone(), seed)?;
            train_detector(&mut det, &dc.schedule(&seed_dir.join("detector")), &train, &val, &dc.options)?;
            Some(det)
        } else {
            None
        };
        for (hi, &n) in cfg.hourglass_counts.iter().enumerate() {
            for (vi, &with) in variants.iter().enumerate() {
                let label = row_label(n, with);
                log::info!("ablation seed {seed}: {label}");
                let mut sched = Schedule::segmentor(n, cfg.ae_epochs, cfg.hg_epochs, cfg.e2e_epochs, cfg.base_lr);
                sched.batch_size = cfg.batch_size;
                sched.seed = seed;
                sched.checkpoint_dir = seed_dir.join(format!("hg{n}_{}", if with { "det" } else { "whole" }));
                let opts = SegTrainOptions {
                    crop: if with { CropSource::GroundTruth { jitter: 0.15 } } else { CropSource::WholeImage },
                    ..Default::default()
                };
                let mut seg = Segmentor::new(SegMentorConfig { hourglass_count: 0, ..cfg.arch.clone() }, seed)?;
                run_segmentor_schedule(&mut seg, &sched, &train, &[], &opts)?;
                let pcfg = PipelineConfig {
                    detector_checkpoint: None,
                    segmentor_checkpoint: PathBuf::new(),
                    segmentor_arch: seg.config().clone(),
                    score_threshold: cfg.detector.options.score_threshold,
                    nms_threshold: cfg.detector.options.nms_threshold,
                    fallback: Fallback::WholeImage,
                };
                let det = if with { detector.as_ref() } else { None };
                let pipeline = Pipeline::from_parts(pcfg, det.map(clone_detector).transpose()?, seg)?;
                let report = pipeline.evaluate_samples(&val)?;
                log::info!("ablation seed {seed}: {label} dice {:.4}", report.mean.dice);
                results[hi * variants.len() + vi].push(report.mean);
            }
        }
    }
    let mut rows = Vec::new();
    for &with in &variants {
        for (hi, &n) in cfg.hourglass_counts.iter().enumerate() {
            let vi = variants.iter().position(|&v| v == with).expect("listed variant");
            let per_seed = results[hi * variants.len() + vi].clone();
            rows.push(AblationRow {
                label: row_label(n, with),
                hourglasses: n,
                with_detector: with,
                median: median_metrics(&per_seed),
                per_seed,
            });
        }
    }
    Ok(AblationTable { rows })
}

fn clone_detector(det: &Detector) -> Result<Detector> {
    let mut copy = Detector::new(det.config().clone(), 0)?;
    copy.store_mut().load_named_tensors(&det.store().to_named_tensors())?;
    Ok(copy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_medians() {
        assert_eq!(row_label(0, false), "UNet");
        assert_eq!(row_label(2, true), "Detector + UNet+2HG");
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!("both".parse::<DetectorUse>().unwrap(), DetectorUse::Both);
        assert!("maybe".parse::<DetectorUse>().is_err());
    }

    #[test]
    fn table_text_has_one_line_per_row() {
        let m = Metrics { accuracy: 0.9, dice: 0.8, jaccard: 0.7, sensitivity: 0.6, specificity: 0.95 };
        let rows = (0..4)
            .flat_map(|n| [true, false].map(|w| AblationRow { label: row_label(n, w), hourglasses: n, with_detector: w, median: m, per_seed: vec![m] }))
            .collect();
        let text = AblationTable { rows }.to_text();
        assert_eq!(text.lines().count(), 9);
        assert!(text.lines().next().unwrap().contains("Accuracy"));
    }
}
