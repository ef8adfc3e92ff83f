//! Box geometry for region proposals: IoU, NMS, anchors, delta
//! parameterization and anchor labelling.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates covering `[x1, x2) × [y1, y2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f32>,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        Self { x1, y1, x2, y2, score: None }
    }

    pub fn with_score(self, score: f32) -> Self {
        Self { score: Some(score), ..self }
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f32, f32) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x2 > self.x1 && self.y2 > self.y1) || !self.area().is_finite()
    }

    /// Clamps to `[0, width] × [0, height]`.
    pub fn clip(&self, width: f32, height: f32) -> Self {
        Self {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
            score: self.score,
        }
    }

    pub fn scaled(&self, sx: f32, sy: f32) -> Self {
        Self {
            x1: self.x1 * sx,
            y1: self.y1 * sy,
            x2: self.x2 * sx,
            y2: self.y2 * sy,
            score: self.score,
        }
    }

    fn score_or_min(&self) -> f32 {
        self.score.unwrap_or(f32::NEG_INFINITY)
    }
}

/// Intersection over union. Symmetric, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Indices kept by greedy non-maximum suppression, in descending score
/// order. Equal scores keep input order. A box survives iff its IoU with
/// every previously kept box is at most `iou_threshold`.
pub fn nms_indices(boxes: &[BBox], iou_threshold: f32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score_or_min()
            .partial_cmp(&boxes[a].score_or_min())
            .unwrap_or(Ordering::Equal)
    });
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold) {
            keep.push(i);
        }
    }
    keep
}

pub fn nms(boxes: &[BBox], iou_threshold: f32) -> Vec<BBox> {
    nms_indices(boxes, iou_threshold).into_iter().map(|i| boxes[i]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub base_sizes: Vec<f32>,
    /// height / width
    pub aspect_ratios: Vec<f32>,
    pub stride: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            base_sizes: vec![32.0, 64.0, 128.0],
            aspect_ratios: vec![0.5, 1.0, 2.0],
            stride: 16,
        }
    }
}

impl AnchorConfig {
    pub fn per_location(&self) -> usize {
        self.base_sizes.len() * self.aspect_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_sizes.is_empty() || self.aspect_ratios.is_empty() || self.stride == 0 {
            return Err(Error::Config("anchor config needs sizes, ratios and a positive stride".into()));
        }
        if self.base_sizes.iter().chain(&self.aspect_ratios).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("anchor sizes and ratios must be positive".into()));
        }
        Ok(())
    }
}

/// Anchors tiled over a `feature_h × feature_w` map. Locations are
/// row-major; within a location the order is size-major, then ratio. Index
/// of anchor `a` at `(i, j)` is `(i·feature_w + j)·A + a`.
pub fn generate_anchors(feature_h: usize, feature_w: usize, config: &AnchorConfig) -> Vec<BBox> {
    let stride = config.stride as f32;
    let mut shapes = Vec::with_capacity(config.per_location());
    for &s in &config.base_sizes {
        for &r in &config.aspect_ratios {
            let w = s / r.sqrt();
            let h = s * r.sqrt();
            shapes.push((w, h));
        }
    }
    let mut anchors = Vec::with_capacity(feature_h * feature_w * shapes.len());
    for i in 0..feature_h {
        for j in 0..feature_w {
            let cx = (j as f32 + 0.5) * stride;
            let cy = (i as f32 + 0.5) * stride;
            for &(w, h) in &shapes {
                anchors.push(BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h));
            }
        }
    }
    anchors
}

/// Centre offsets relative to anchor size and log size ratios.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub tx: f32,
    pub ty: f32,
    pub tw: f32,
    pub th: f32,
}

impl BoxDelta {
    pub fn to_array(self) -> [f32; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(a: [f32; 4]) -> Self {
        Self { tx: a[0], ty: a[1], tw: a[2], th: a[3] }
    }
}

/// Size deltas are clamped before `exp` so a wild prediction cannot overflow.
pub const MAX_LOG_SCALE: f32 = 4.135_166_6; // ln(1000 / 16)

pub fn encode_box(gt: &BBox, anchor: &BBox) -> Result<BoxDelta> {
    if gt.is_degenerate() {
        return Err(Error::DegenerateBox(format!("ground truth {gt:?} has non-positive size")));
    }
    if anchor.is_degenerate() {
        return Err(Error::DegenerateBox(format!("anchor {anchor:?} has non-positive size")));
    }
    let (aw, ah) = (f64::from(anchor.width()), f64::from(anchor.height()));
    let (gw, gh) = (f64::from(gt.width()), f64::from(gt.height()));
    let (acx, acy) = (f64::from(anchor.x1) + 0.5 * aw, f64::from(anchor.y1) + 0.5 * ah);
    let (gcx, gcy) = (f64::from(gt.x1) + 0.5 * gw, f64::from(gt.y1) + 0.5 * gh);
    Ok(BoxDelta {
        tx: ((gcx - acx) / aw) as f32,
        ty: ((gcy - acy) / ah) as f32,
        tw: (gw / aw).ln() as f32,
        th: (gh / ah).ln() as f32,
    })
}

pub fn decode_box(delta: &BoxDelta, anchor: &BBox) -> BBox {
    let (aw, ah) = (f64::from(anchor.width()), f64::from(anchor.height()));
    let (acx, acy) = (f64::from(anchor.x1) + 0.5 * aw, f64::from(anchor.y1) + 0.5 * ah);
    let cx = acx + f64::from(delta.tx) * aw;
    let cy = acy + f64::from(delta.ty) * ah;
    let w = aw * f64::from(delta.tw.min(MAX_LOG_SCALE)).exp();
    let h = ah * f64::from(delta.th.min(MAX_LOG_SCALE)).exp();
    BBox::new(
        (cx - 0.5 * w) as f32,
        (cy - 0.5 * h) as f32,
        (cx + 0.5 * w) as f32,
        (cy + 0.5 * h) as f32,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnchorAssignment {
    pub label: AnchorLabel,
    /// Ground truth with the highest IoU (lowest index on ties).
    pub gt_index: usize,
}

/// Labels anchors against ground truth: positive when IoU ≥ `pos_iou` with
/// some box or when the anchor attains a box's maximum IoU, negative when
/// the best IoU is below `neg_iou`, ignored otherwise.
pub fn assign_anchors(anchors: &[BBox], gt_boxes: &[BBox], pos_iou: f32, neg_iou: f32) -> Result<Vec<AnchorAssignment>> {
    if gt_boxes.is_empty() {
        return Err(Error::Contract("assign_anchors needs at least one ground-truth box".into()));
    }
    let table: Vec<Vec<f32>> = anchors.iter().map(|a| gt_boxes.iter().map(|g| iou(a, g)).collect()).collect();
    let mut out: Vec<AnchorAssignment> = table
        .iter()
        .map(|row| {
            let (best, best_iou) = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (g, &v)| if v > acc.1 { (g, v) } else { acc });
            let label = if best_iou >= pos_iou {
                AnchorLabel::Positive
            } else if best_iou < neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            };
            AnchorAssignment { label, gt_index: best }
        })
        .collect();

    for g in 0..gt_boxes.len() {
        let max = table.iter().map(|row| row[g]).fold(f32::NEG_INFINITY, f32::max);
        if max > 0.0 {
            for (a, row) in table.iter().enumerate() {
                if row[g] == max {
                    out[a].label = AnchorLabel::Positive;
                }
            }
        } else if let Some(a) = (0..anchors.len()).next() {
            out[a].label = AnchorLabel::Positive;
        }
    }
    Ok(out)
}

/// Tight box around the nonzero pixels of a row-major `height × width`
/// mask, grown by `margin_fraction` of its size on every side and clipped.
/// An empty mask yields the whole image.
pub fn mask_to_bbox(mask: &[f32], height: usize, width: usize, margin_fraction: f32) -> Result<BBox> {
    if mask.len() != height * width {
        return Err(Error::Dimension(format!(
            "mask has {} values, expected {height}x{width}",
            mask.len()
        )));
    }
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..height {
        for c in 0..width {
            if mask[r * width + c] != 0.0 {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    let (w, h) = (width as f32, height as f32);
    if r0 == usize::MAX {
        return Ok(BBox::new(0.0, 0.0, w, h));
    }
    let tight = BBox::new(c0 as f32, r0 as f32, (c1 + 1) as f32, (r1 + 1) as f32);
    let (mx, my) = (tight.width() * margin_fraction, tight.height() * margin_fraction);
    Ok(BBox::new(tight.x1 - mx, tight.y1 - my, tight.x2 + mx, tight.y2 + my).clip(w, h))
}
