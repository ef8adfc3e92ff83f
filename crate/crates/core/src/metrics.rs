//! Dice loss and the pixel-level segmentation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DICE_SMOOTH: f32 = 1.0;

/// `1 − (2·Σ p·t + smooth) / (Σ p + Σ t + smooth)`, fused into one node.
pub fn dice_loss(pred: &Tensor, target: &Tensor, smooth: f32) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "dice_loss: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (p, t) = (pred.data(), target.data());
    let inter: f64 = p.iter().zip(t).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
    let total: f64 = p.iter().chain(t).map(|&v| f64::from(v)).sum();
    let s = f64::from(smooth);
    let num = 2.0 * inter + s;
    let den = total + s;
    let loss = if den == 0.0 { 0.0 } else { 1.0 - num / den };
    let target_saved = target.to_vec();
    Ok(Tensor::from_op("dice_loss", vec![1], vec![loss as f32], vec![pred.clone()], move |g| {
        if den == 0.0 {
            return vec![Some(vec![0.0; target_saved.len()])];
        }
        // d/dp_i = −(2 t_i · den − num) / den²
        let gx = target_saved
            .iter()
            .map(|&ti| (f64::from(g[0]) * -(2.0 * f64::from(ti) * den - num) / (den * den)) as f32)
            .collect();
        vec![Some(gx)]
    }))
}

pub fn binarize(pred: &Tensor, threshold: f32) -> Tensor {
    let data = pred.data().iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect();
    Tensor::new(pred.shape(), data).expect("same shape")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Counts over binary masks; any nonzero value is foreground.
    pub fn from_masks(pred: &[f32], gt: &[f32]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::Dimension(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0.0, g != 0.0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            dice: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
            jaccard: ratio(self.tp, self.tp + self.fp + self.fn_),
            sensitivity: ratio(self.tp, self.tp + self.fn_),
            specificity: ratio(self.tn, self.tn + self.fp),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub dice: f64,
    pub jaccard: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Metrics {
    /// Column order of the text tables.
    pub const NAMES: [&'static str; 5] = ["Accuracy", "Dice", "Jaccard", "Sensitivity", "Specificity"];

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.dice, self.jaccard, self.sensitivity, self.specificity]
    }

    /// Per-metric mean; `None` for an empty slice.
    pub fn mean(rows: &[Metrics]) -> Option<Metrics> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(Metrics {
            accuracy: avg(|m| m.accuracy),
            dice: avg(|m| m.dice),
            jaccard: avg(|m| m.jaccard),
            sensitivity: avg(|m| m.sensitivity),
            specificity: avg(|m| m.specificity),
        })
    }
}

pub fn compute_metrics(pred: &Tensor, gt: &Tensor) -> Result<Metrics> {
    if pred.shape() != gt.shape() {
        return Err(Error::Dimension(format!(
            "compute_metrics: prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(ConfusionCounts::from_masks(pred.data(), gt.data())?.metrics())
}

/// One evaluated image. `metrics` is absent when the image failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image: String,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Dataset-level report: mean of per-image metrics over the images that
/// were evaluated successfully.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub mean: Metrics,
    pub per_image: Vec<ImageResult>,
}

impl MetricsReport {
    pub fn from_rows(per_image: Vec<ImageResult>) -> Result<Self> {
        let ok: Vec<Metrics> = per_image.iter().filter_map(|r| r.metrics).collect();
        let mean = Metrics::mean(&ok)
            .ok_or_else(|| Error::Contract(format!("none of {} images could be evaluated", per_image.len())))?;
        Ok(Self { mean, per_image })
    }

    pub fn failures(&self) -> usize {
        self.per_image.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn to_table(&self) -> String {
        let mut s = format_header("");
        s.push_str(&format_row("mean", &self.mean));
        s
    }
}

pub fn format_header(label: &str) -> String {
    let mut s = format!("{label:<24}");
    for n in Metrics::NAMES {
        s.push_str(&format!(" {n:>11}"));
    }
    s.push('\n');
    s
}

pub fn format_row(label: &str, m: &Metrics) -> String {
    let mut s = format!("{label:<24}");
    for v in m.values() {
        s.push_str(&format!(" {v:>11.4}"));
    }
    s.push('\n');
    s
}
