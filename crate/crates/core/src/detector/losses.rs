//! Training losses of the proposal network and the refinement head.

use rand::seq::index::sample;
use rand::Rng;

use super::geometry::{AnchorLabel, BoxDelta};
use crate::error::{Error, Result};
use crate::tensor::loss::{bce_with_logits, masked_mse, softmax_cross_entropy};
use crate::tensor::Tensor;

/// Refinement-head regression targets are divided by these before the loss
/// and predictions multiplied by them when decoding.
pub const RCNN_DELTA_STD: [f32; 4] = [0.1, 0.1, 0.2, 0.2];

/// Binary cross-entropy over non-ignored anchors and MSE over the deltas of
/// positive anchors.
///
/// `objectness` is `[N,A,Hf,Wf]` and `deltas` is `[N,4A,Hf,Wf]` with channel
/// `4a+k` holding component `k` of anchor `a`. `labels` and `targets` list
/// anchors image by image in [`generate_anchors`](super::geometry::generate_anchors)
/// order. Targets of non-positive anchors are ignored.
pub fn rpn_losses(
    objectness: &Tensor,
    deltas: &Tensor,
    labels: &[AnchorLabel],
    targets: &[BoxDelta],
) -> Result<(Tensor, Tensor)> {
    let shape = objectness.shape();
    if shape.len() != 4 || deltas.shape() != [shape[0], 4 * shape[1], shape[2], shape[3]] {
        return Err(Error::Dimension(format!(
            "rpn_losses: objectness {:?} and deltas {:?} do not describe the same anchors",
            shape,
            deltas.shape()
        )));
    }
    let (n, a, hf, wf) = (shape[0], shape[1], shape[2], shape[3]);
    let count = n * a * hf * wf;
    if labels.len() != count || targets.len() != count {
        return Err(Error::Dimension(format!(
            "rpn_losses: {count} anchors in the maps, {} labels, {} targets",
            labels.len(),
            targets.len()
        )));
    }
    let mut cls_t = vec![0.0f32; count];
    let mut cls_w = vec![0.0f32; count];
    let mut reg_t = vec![0.0f32; 4 * count];
    let mut reg_m = vec![0.0f32; 4 * count];
    for img in 0..n {
        for i in 0..hf {
            for j in 0..wf {
                for k in 0..a {
                    let anchor = img * hf * wf * a + (i * wf + j) * a + k;
                    let at = ((img * a + k) * hf + i) * wf + j;
                    match labels[anchor] {
                        AnchorLabel::Positive => {
                            cls_t[at] = 1.0;
                            cls_w[at] = 1.0;
                            let d = targets[anchor].to_array();
                            for (c, &v) in d.iter().enumerate() {
                                let dt = ((img * 4 * a + 4 * k + c) * hf + i) * wf + j;
                                reg_t[dt] = v;
                                reg_m[dt] = 1.0;
                            }
                        }
                        AnchorLabel::Negative => cls_w[at] = 1.0,
                        AnchorLabel::Ignore => {}
                    }
                }
            }
        }
    }
    Ok((bce_with_logits(objectness, &cls_t, &cls_w)?, masked_mse(deltas, &reg_t, &reg_m)?))
}

/// Keeps at most `max_pos` positives and `max_neg` negatives, chosen
/// uniformly; the rest become [`AnchorLabel::Ignore`].
pub fn subsample_labels(labels: &mut [AnchorLabel], max_pos: usize, max_neg: usize, rng: &mut impl Rng) {
    for (wanted, cap) in [(AnchorLabel::Positive, max_pos), (AnchorLabel::Negative, max_neg)] {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == wanted).collect();
        if idx.len() <= cap {
            continue;
        }
        let mut keep = vec![false; idx.len()];
        for k in sample(rng, idx.len(), cap) {
            keep[k] = true;
        }
        for (k, &i) in idx.iter().enumerate() {
            if !keep[k] {
                labels[i] = AnchorLabel::Ignore;
            }
        }
    }
}

/// Two-class cross-entropy over sampled proposals and MSE over the
/// normalized deltas of foreground ones. `labels[r]` is `Some(true)` for
/// lesion, `Some(false)` for background and `None` to skip the proposal.
pub fn rcnn_losses(
    cls_logits: &Tensor,
    deltas: &Tensor,
    labels: &[Option<bool>],
    targets: &[BoxDelta],
) -> Result<(Tensor, Tensor)> {
    let r = labels.len();
    if targets.len() != r || cls_logits.numel() != 2 * r || deltas.numel() != 4 * r {
        return Err(Error::Dimension(format!(
            "rcnn_losses: {r} labels, {} targets, logits {:?}, deltas {:?}",
            targets.len(),
            cls_logits.shape(),
            deltas.shape()
        )));
    }
    let classes: Vec<Option<usize>> = labels.iter().map(|l| l.map(usize::from)).collect();
    let mut reg_t = vec![0.0f32; 4 * r];
    let mut reg_m = vec![0.0f32; 4 * r];
    for (p, (label, t)) in labels.iter().zip(targets).enumerate() {
        if *label == Some(true) {
            for (c, v) in t.to_array().iter().enumerate() {
                reg_t[4 * p + c] = v / RCNN_DELTA_STD[c];
                reg_m[4 * p + c] = 1.0;
            }
        }
    }
    Ok((
        softmax_cross_entropy(cls_logits, 2, &classes)?,
        masked_mse(deltas, &reg_t, &reg_m)?,
    ))
}
