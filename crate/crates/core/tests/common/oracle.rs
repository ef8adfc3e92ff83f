//! Brute-force oracles for the box geometry and the metrics.

use lesionseg::detector::{assign_anchors, decode_box, encode_box, nms, AnchorLabel, BBox};
use lesionseg::metrics::compute_metrics;
use lesionseg::tensor::Tensor;
use rand::Rng;

use super::rng;

/// Integer box whose pixel set is `[x1, x2) × [y1, y2)`.
#[derive(Clone, Copy, Debug)]
pub struct PixBox {
    pub x1: i32,
    pub y1: i32,
    pub x2: i32,
    pub y2: i32,
}

impl PixBox {
    pub fn random(rng: &mut impl Rng, grid: i32, max_side: i32) -> Self {
        let (w, h) = (rng.gen_range(1..=max_side), rng.gen_range(1..=max_side));
        let (x1, y1) = (rng.gen_range(0..grid - w + 1), rng.gen_range(0..grid - h + 1));
        Self { x1, y1, x2: x1 + w, y2: y1 + h }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x1 as f32, self.y1 as f32, self.x2 as f32, self.y2 as f32)
    }

    fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }
}

/// IoU by counting pixels of the two sets.
pub fn raster_iou(a: &PixBox, b: &PixBox) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for y in a.y1.min(b.y1)..a.y2.max(b.y2) {
        for x in a.x1.min(b.x1)..a.x2.max(b.x2) {
            let (ia, ib) = (a.contains(x, y), b.contains(x, y));
            inter += u32::from(ia && ib);
            union += u32::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        f64::from(inter) / f64::from(union)
    }
}

/// Quadratic greedy suppression: repeatedly take the best remaining box
/// (lowest index among equal scores) and drop everything overlapping it
/// above the threshold.
pub fn greedy_nms(boxes: &[PixBox], scores: &[f32], threshold: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; boxes.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if alive[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(b);
        alive[b] = false;
        for i in 0..boxes.len() {
            if alive[i] && raster_iou(&boxes[b], &boxes[i]) > threshold {
                alive[i] = false;
            }
        }
    }
    kept
}

/// `instances` random 20-box problems on a 40-pixel grid with coarse scores
/// so that ties occur.
pub fn nms_agreement(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut r = rng(seed);
        let boxes: Vec<PixBox> = (0..20).map(|_| PixBox::random(&mut r, 40, 20)).collect();
        let scores: Vec<f32> = (0..20).map(|_| r.gen_range(0..10) as f32 / 10.0).collect();
        let input: Vec<BBox> = boxes.iter().zip(&scores).map(|(b, &s)| b.bbox().with_score(s)).collect();
        let got = nms(&input, 0.5);
        let want: Vec<BBox> = greedy_nms(&boxes, &scores, 0.5).iter().map(|&i| input[i]).collect();
        if got != want {
            return Err(format!("nms instance {seed}: got {} boxes, oracle {}", got.len(), want.len()));
        }
    }
    Ok(())
}

/// Labels from the full IoU table: positive at IoU ≥ pos or when the anchor
/// attains a gt's positive maximum (anchor 0 when that maximum is 0),
/// negative below neg, ignore between; matched gt is the lowest-index argmax.
pub fn assignment_oracle(anchors: &[PixBox], gts: &[PixBox], pos: f64, neg: f64) -> Vec<(AnchorLabel, usize)> {
    let table: Vec<Vec<f64>> = anchors.iter().map(|a| gts.iter().map(|g| raster_iou(a, g)).collect()).collect();
    let mut out: Vec<(AnchorLabel, usize)> = table
        .iter()
        .map(|row| {
            let mut best = 0;
            for g in 1..row.len() {
                if row[g] > row[best] {
                    best = g;
                }
            }
            let label = if row[best] >= pos {
                AnchorLabel::Positive
            } else if row[best] < neg {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            };
            (label, best)
        })
        .collect();
    for g in 0..gts.len() {
        let max = table.iter().map(|row| row[g]).fold(0.0, f64::max);
        for (a, row) in table.iter().enumerate() {
            if (max > 0.0 && row[g] == max) || (max == 0.0 && a == 0) {
                out[a].0 = AnchorLabel::Positive;
            }
        }
    }
    out
}

pub fn assignment_agreement(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut r = rng(1_000 + seed);
        let anchors: Vec<PixBox> = (0..50).map(|_| PixBox::random(&mut r, 32, 16)).collect();
        let gts: Vec<PixBox> = (0..2).map(|_| PixBox::random(&mut r, 32, 16)).collect();
        let ab: Vec<BBox> = anchors.iter().map(PixBox::bbox).collect();
        let gb: Vec<BBox> = gts.iter().map(PixBox::bbox).collect();
        let got = assign_anchors(&ab, &gb, 0.7, 0.3).map_err(|e| e.to_string())?;
        let want = assignment_oracle(&anchors, &gts, 0.7, 0.3);
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            if (g.label, g.gt_index) != *w {
                return Err(format!("assignment instance {seed} anchor {i}: got {:?}/{}, oracle {w:?}", g.label, g.gt_index));
            }
        }
    }
    Ok(())
}

/// Worst per-coordinate error of `decode(encode(g, a), a)` over random pairs,
/// after checking each encoding against the closed-form deltas. Sides range
/// over 2–120 px so every size ratio stays inside decode's log-scale clamp.
pub fn round_trip(pairs: u64) -> Result<f64, String> {
    let mut r = rng(77);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let mk = |r: &mut rand_chacha::ChaCha8Rng| {
            let (x, y) = (r.gen_range(-50.0..150.0f32), r.gen_range(-50.0..150.0f32));
            BBox::new(x, y, x + r.gen_range(2.0..120.0), y + r.gen_range(2.0..120.0))
        };
        let (g, a) = (mk(&mut r), mk(&mut r));
        let d = encode_box(&g, &a).map_err(|e| e.to_string())?;
        let (gw, gh, aw, ah) = (
            f64::from(g.x2 - g.x1),
            f64::from(g.y2 - g.y1),
            f64::from(a.x2 - a.x1),
            f64::from(a.y2 - a.y1),
        );
        let want = [
            (f64::from(g.x1) + gw / 2.0 - f64::from(a.x1) - aw / 2.0) / aw,
            (f64::from(g.y1) + gh / 2.0 - f64::from(a.y1) - ah / 2.0) / ah,
            (gw / aw).ln(),
            (gh / ah).ln(),
        ];
        for (got, want) in [d.tx, d.ty, d.tw, d.th].iter().zip(want) {
            if (f64::from(*got) - want).abs() > 1e-5 * (1.0 + want.abs()) {
                return Err(format!("encode {g:?} against {a:?}: {d:?}, expected {want:?}"));
            }
        }
        let back = decode_box(&d, &a);
        for (u, v) in [(back.x1, g.x1), (back.y1, g.y1), (back.x2, g.x2), (back.y2, g.y2)] {
            worst = worst.max(f64::from((u - v).abs()));
        }
    }
    Ok(worst)
}

/// Confusion-matrix metrics written out by hand from the counts.
pub fn hand_metrics(tp: f64, fp: f64, fn_: f64, tn: f64) -> [f64; 5] {
    let total = tp + fp + fn_ + tn;
    let ratio = |num: f64, den: f64| if den == 0.0 { 1.0 } else { num / den };
    [
        (tp + tn) / total,
        ratio(2.0 * tp, 2.0 * tp + fp + fn_),
        ratio(tp, tp + fp + fn_),
        ratio(tp, tp + fn_),
        ratio(tn, tn + fp),
    ]
}

/// Builds flat masks realising the given confusion counts.
pub fn masks_for(tp: usize, fp: usize, fn_: usize, tn: usize) -> (Tensor, Tensor) {
    let n = tp + fp + fn_ + tn;
    let mut p = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for (count, pv, gv) in [(tp, 1.0, 1.0), (fp, 1.0, 0.0), (fn_, 0.0, 1.0), (tn, 0.0, 0.0)] {
        p.extend(std::iter::repeat_n(pv, count));
        g.extend(std::iter::repeat_n(gv, count));
    }
    (Tensor::new(&[1, 1, n], p).unwrap(), Tensor::new(&[1, 1, n], g).unwrap())
}

pub fn metric_values(pred: &Tensor, gt: &Tensor) -> Result<[f64; 5], String> {
    let m = compute_metrics(pred, gt).map_err(|e| e.to_string())?;
    Ok([m.accuracy, m.dice, m.jaccard, m.sensitivity, m.specificity])
}
