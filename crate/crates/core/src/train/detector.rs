use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{backward_step, run_stages, Accumulator, EpochStats, Trainable, TrainingReport};
use super::schedule::{Schedule, StageKind, TrainStage};
use crate::data::{resize_bilinear, Sample};
use crate::detector::{
    assign_anchors, encode_box, iou, rcnn_losses, rpn_losses, subsample_labels, AnchorLabel, BBox, BoxDelta,
    Detector,
};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::param::ParamStore;
use crate::tensor::{no_grad, ops, Mode, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetTrainOptions {
    pub pos_iou: f32,
    pub neg_iou: f32,
    pub rpn_positives: usize,
    pub rpn_negatives: usize,
    /// Proposals at or above this IoU with the lesion train as foreground.
    pub fg_iou: f32,
    pub rcnn_foreground: usize,
    pub rcnn_background: usize,
    /// Random boxes around the lesion added to the head's candidates so it
    /// sees partial-lesion negatives that proposals rarely provide.
    #[serde(default = "default_jittered")]
    pub jittered_boxes: usize,
    pub flip: bool,
    pub score_threshold: f32,
    pub nms_threshold: f32,
}

fn default_jittered() -> usize {
    16
}

impl Default for DetTrainOptions {
    fn default() -> Self {
        Self {
            pos_iou: 0.7,
            neg_iou: 0.3,
            rpn_positives: 128,
            rpn_negatives: 128,
            fg_iou: 0.5,
            rcnn_foreground: 16,
            rcnn_background: 48,
            jittered_boxes: 16,
            flip: true,
            score_threshold: 0.5,
            nms_threshold: 0.5,
        }
    }
}

impl Trainable for Detector {
    fn store(&self) -> &ParamStore {
        Detector::store(self)
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        Detector::store_mut(self)
    }

    fn arch_json(&self) -> serde_json::Value {
        serde_json::to_value(self.config()).expect("config serializes")
    }

    fn prepare_stage(&mut self, kind: StageKind) -> Result<()> {
        if kind.is_detector() {
            Ok(())
        } else {
            Err(Error::Config(format!("{kind} is a segmentor stage")))
        }
    }
}

/// A sample resized to the detector input with its box in input pixels.
#[derive(Clone, Debug)]
pub struct DetExample {
    pub image: Tensor,
    pub gt: BBox,
}

pub fn prepare_examples(det: &Detector, samples: &[Sample]) -> Result<Vec<DetExample>> {
    let s = det.config().input_size;
    samples
        .iter()
        .map(|x| {
            let (sx, sy) = (s as f32 / x.width() as f32, s as f32 / x.height() as f32);
            Ok(DetExample { image: resize_bilinear(&x.image, s, s)?, gt: x.bbox.scaled(sx, sy) })
        })
        .collect()
}

fn flipped(ex: &DetExample, horizontal: bool, vertical: bool) -> Result<(Tensor, BBox)> {
    let s = ex.image.shape()[1];
    let sf = s as f32;
    let src = ex.image.data();
    let mut out = vec![0.0f32; src.len()];
    for c in 0..3 {
        for i in 0..s {
            for j in 0..s {
                let si = if vertical { s - 1 - i } else { i };
                let sj = if horizontal { s - 1 - j } else { j };
                out[(c * s + i) * s + j] = src[(c * s + si) * s + sj];
            }
        }
    }
    let mut b = ex.gt;
    if horizontal {
        (b.x1, b.x2) = (sf - ex.gt.x2, sf - ex.gt.x1);
    }
    if vertical {
        (b.y1, b.y2) = (sf - ex.gt.y2, sf - ex.gt.y1);
    }
    Ok((Tensor::new(&[1, 3, s, s], out)?, b))
}

fn rpn_targets(
    det: &Detector,
    gts: &[BBox],
    opts: &DetTrainOptions,
    rng: &mut impl Rng,
) -> Result<(Vec<AnchorLabel>, Vec<BoxDelta>)> {
    let anchors = det.anchors();
    let mut labels = Vec::with_capacity(anchors.len() * gts.len());
    let mut targets = Vec::with_capacity(anchors.len() * gts.len());
    for gt in gts {
        let assigned = assign_anchors(&anchors, std::slice::from_ref(gt), opts.pos_iou, opts.neg_iou)?;
        let mut l: Vec<AnchorLabel> = assigned.iter().map(|a| a.label).collect();
        subsample_labels(&mut l, opts.rpn_positives, opts.rpn_negatives, rng);
        for (a, &lab) in anchors.iter().zip(&l) {
            targets.push(if lab == AnchorLabel::Positive { encode_box(gt, a)? } else { BoxDelta::default() });
        }
        labels.extend(l);
    }
    Ok((labels, targets))
}

type RcnnBatch = (Vec<(usize, BBox)>, Vec<Option<bool>>, Vec<BoxDelta>);

fn jittered_box(gt: &BBox, size: f32, rng: &mut impl Rng) -> BBox {
    let (w, h) = (gt.width() * rng.gen_range(0.4..1.4), gt.height() * rng.gen_range(0.4..1.4));
    let (cx, cy) = gt.center();
    let cx = cx + gt.width() * rng.gen_range(-0.3..0.3);
    let cy = cy + gt.height() * rng.gen_range(-0.3..0.3);
    BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).clip(size, size)
}

fn rcnn_targets(
    proposals: &[Vec<BBox>],
    gts: &[BBox],
    input_size: f32,
    opts: &DetTrainOptions,
    rng: &mut impl Rng,
) -> Result<RcnnBatch> {
    let mut pairs = Vec::new();
    let mut labels = Vec::new();
    let mut targets = Vec::new();
    for (img, (props, gt)) in proposals.iter().zip(gts).enumerate() {
        // the ground truth itself guarantees at least one foreground sample
        let mut cands: Vec<BBox> = props.iter().map(|b| BBox { score: None, ..*b }).collect();
        cands.push(*gt);
        for _ in 0..opts.jittered_boxes {
            let b = jittered_box(gt, input_size, rng);
            if !b.is_degenerate() {
                cands.push(b);
            }
        }
        let (mut fg, mut bg): (Vec<BBox>, Vec<BBox>) = cands.into_iter().partition(|b| iou(b, gt) >= opts.fg_iou);
        fg.shuffle(rng);
        bg.shuffle(rng);
        fg.truncate(opts.rcnn_foreground);
        bg.truncate(opts.rcnn_background);
        for b in fg {
            pairs.push((img, b));
            labels.push(Some(true));
            targets.push(encode_box(gt, &b)?);
        }
        for b in bg {
            pairs.push((img, b));
            labels.push(Some(false));
            targets.push(BoxDelta::default());
        }
    }
    Ok((pairs, labels, targets))
}

#[allow(clippy::too_many_arguments)]
fn detector_epoch(
    det: &mut Detector,
    adam: &mut Adam,
    stage: &TrainStage,
    train: &[DetExample],
    opts: &DetTrainOptions,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<EpochStats> {
    let s = det.config().input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xDE7);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut acc = Accumulator::default();
    for chunk in order.chunks(batch_size) {
        let mut xs = Vec::with_capacity(chunk.len());
        let mut gts = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let (h, v) = if opts.flip { (rng.gen_bool(0.5), rng.gen_bool(0.5)) } else { (false, false) };
            let (x, b) = flipped(&train[i], h, v)?;
            xs.push(x);
            gts.push(b);
        }
        let x = ops::concat_batch(&xs)?.reshape(&[chunk.len(), 3, s, s])?;
        let trunk = det.trunk(&x, Mode::Train)?;
        let mut parts = Vec::new();
        if stage.kind != StageKind::RcnnOnly {
            let (labels, targets) = rpn_targets(det, &gts, opts, &mut rng)?;
            let (cls, reg) = rpn_losses(&trunk.objectness, &trunk.deltas, &labels, &targets)?;
            acc.add("rpn_cls", cls.item()?);
            acc.add("rpn_reg", reg.item()?);
            parts.push(cls);
            parts.push(reg);
        }
        if stage.kind != StageKind::RpnOnly {
            let proposals = no_grad(|| det.proposals(&trunk))?;
            let (pairs, labels, targets) = rcnn_targets(&proposals, &gts, s as f32, opts, &mut rng)?;
            let (cls_logits, deltas) = det.refine(&trunk.roi_features, &pairs)?;
            let (cls, reg) = rcnn_losses(&cls_logits, &deltas, &labels, &targets)?;
            acc.add("rcnn_cls", cls.item()?);
            acc.add("rcnn_reg", reg.item()?);
            parts.push(cls);
            parts.push(reg);
        }
        let mut loss = parts[0].clone();
        for p in &parts[1..] {
            loss = ops::add(&loss, p)?;
        }
        let v = backward_step(&loss, adam, det.store_mut())?;
        acc.add("loss", v);
        acc.step();
    }
    Ok(acc.finish())
}

/// Fraction of examples whose lesion is matched at IoU ≥ `min_iou` by one
/// of the top `k` proposals.
pub fn proposal_recall(det: &Detector, examples: &[DetExample], k: usize, min_iou: f32) -> Result<f32> {
    if examples.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let s = det.config().input_size;
    let mut hits = 0usize;
    no_grad(|| -> Result<()> {
        for chunk in examples.chunks(16) {
            let xs: Vec<Tensor> = chunk.iter().map(|e| e.image.reshape(&[1, 3, s, s])).collect::<Result<_>>()?;
            let trunk = det.trunk(&ops::concat_batch(&xs)?, Mode::Eval)?;
            for (props, ex) in det.proposals(&trunk)?.iter().zip(chunk) {
                if props.iter().take(k).any(|p| iou(p, &ex.gt) >= min_iou) {
                    hits += 1;
                }
            }
        }
        Ok(())
    })?;
    Ok(hits as f32 / examples.len() as f32)
}

/// Fraction of samples where `detect` returns exactly one box and that box
/// overlaps the lesion at IoU ≥ `min_iou`.
pub fn single_detection_rate(det: &Detector, samples: &[Sample], score_threshold: f32, nms_threshold: f32, min_iou: f32) -> Result<f32> {
    if samples.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let mut hits = 0usize;
    for s in samples {
        let boxes = det.detect(&s.image, score_threshold, nms_threshold)?;
        if boxes.len() == 1 && iou(&boxes[0], &s.bbox) >= min_iou {
            hits += 1;
        }
    }
    Ok(hits as f32 / samples.len() as f32)
}

/// Step-wise detector training. Validation reports top-50 proposal recall
/// after proposal-only stages and the single-detection rate otherwise.
pub fn train_detector(
    det: &mut Detector,
    schedule: &Schedule,
    train: &[Sample],
    val: &[Sample],
    opts: &DetTrainOptions,
) -> Result<TrainingReport> {
    if train.is_empty() {
        return Err(Error::EmptyManifest);
    }
    if schedule.stages.iter().any(|s| !s.kind.is_detector()) {
        return Err(Error::Config("detector schedule contains segmentor stages".into()));
    }
    let train_ex = prepare_examples(det, train)?;
    let val_ex = prepare_examples(det, val)?;
    let (bs, seed) = (schedule.batch_size, schedule.seed);
    run_stages(
        det,
        schedule,
        "val_recall_or_hit_rate",
        |m, adam, stage, epoch| detector_epoch(m, adam, stage, &train_ex, opts, bs, seed, epoch),
        |m, stage| {
            if val.is_empty() {
                return Ok(None);
            }
            let v = if stage.kind == StageKind::RpnOnly {
                proposal_recall(m, &val_ex, 50, 0.5)?
            } else {
                single_detection_rate(m, val, opts.score_threshold, opts.nms_threshold, 0.5)?
            };
            Ok(Some(v))
        },
    )
}
