//! Fused scalar losses over raw tensors. Element selection is passed as
//! per-element weights so callers can ignore entries without reshaping.

use super::autograd::Tensor;
use crate::error::{Error, Result};

fn check_len(t: &Tensor, len: usize, what: &str) -> Result<()> {
    if t.numel() != len {
        return Err(Error::Dimension(format!(
            "{what}: tensor {:?} has {} elements, targets have {len}",
            t.shape(),
            t.numel()
        )));
    }
    Ok(())
}

/// Numerically stable `log(1 + exp(x))`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary cross-entropy on logits, averaged over entries with weight > 0.
/// Returns 0 when every weight is 0.
pub fn bce_with_logits(logits: &Tensor, targets: &[f32], weights: &[f32]) -> Result<Tensor> {
    check_len(logits, targets.len(), "bce_with_logits")?;
    check_len(logits, weights.len(), "bce_with_logits")?;
    let count = weights.iter().filter(|&&w| w > 0.0).count();
    let mut total = 0.0f64;
    if count > 0 {
        for ((&z, &t), &w) in logits.data().iter().zip(targets).zip(weights) {
            if w > 0.0 {
                let z = f64::from(z);
                // t·softplus(−z) + (1−t)·softplus(z)
                total += f64::from(w)
                    * (f64::from(t) * softplus(-z) + (1.0 - f64::from(t)) * softplus(z));
            }
        }
        total /= count as f64;
    }
    let (logits_saved, targets, weights) = (logits.clone(), targets.to_vec(), weights.to_vec());
    Ok(Tensor::from_op(
        "bce_with_logits",
        vec![1],
        vec![total as f32],
        vec![logits.clone()],
        move |g| {
            let scale = if count > 0 { g[0] / count as f32 } else { 0.0 };
            let gx = logits_saved
                .data()
                .iter()
                .zip(&targets)
                .zip(&weights)
                .map(|((&z, &t), &w)| {
                    if w > 0.0 {
                        scale * w * (super::ops::sigmoid_scalar(z) - t)
                    } else {
                        0.0
                    }
                })
                .collect();
            vec![Some(gx)]
        },
    ))
}

/// Mean squared error over entries with mask > 0; 0 when the mask is empty.
pub fn masked_mse(pred: &Tensor, targets: &[f32], mask: &[f32]) -> Result<Tensor> {
    check_len(pred, targets.len(), "masked_mse")?;
    check_len(pred, mask.len(), "masked_mse")?;
    let count = mask.iter().filter(|&&m| m > 0.0).count();
    let mut total = 0.0f64;
    if count > 0 {
        for ((&p, &t), &m) in pred.data().iter().zip(targets).zip(mask) {
            if m > 0.0 {
                let d = f64::from(p) - f64::from(t);
                total += d * d;
            }
        }
        total /= count as f64;
    }
    let (pred_saved, targets, mask) = (pred.clone(), targets.to_vec(), mask.to_vec());
    Ok(Tensor::from_op(
        "masked_mse",
        vec![1],
        vec![total as f32],
        vec![pred.clone()],
        move |g| {
            let scale = if count > 0 { 2.0 * g[0] / count as f32 } else { 0.0 };
            let gx = pred_saved
                .data()
                .iter()
                .zip(&targets)
                .zip(&mask)
                .map(|((&p, &t), &m)| if m > 0.0 { scale * (p - t) } else { 0.0 })
                .collect();
            vec![Some(gx)]
        },
    ))
}

/// Softmax cross-entropy over rows of `classes` logits. `labels[r]` of `None`
/// drops the row; the loss is averaged over the kept rows.
pub fn softmax_cross_entropy(logits: &Tensor, classes: usize, labels: &[Option<usize>]) -> Result<Tensor> {
    check_len(logits, labels.len() * classes, "softmax_cross_entropy")?;
    if let Some(bad) = labels.iter().flatten().find(|&&l| l >= classes) {
        return Err(Error::Contract(format!("label {bad} out of range for {classes} classes")));
    }
    let rows = labels.len();
    let kept = labels.iter().filter(|l| l.is_some()).count();
    let mut probs = vec![0.0f32; rows * classes];
    let mut total = 0.0f64;
    for r in 0..rows {
        let z = &logits.data()[r * classes..(r + 1) * classes];
        let zmax = z.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let denom: f64 = z.iter().map(|&v| f64::from(v - zmax).exp()).sum();
        for k in 0..classes {
            probs[r * classes + k] = (f64::from(z[k] - zmax).exp() / denom) as f32;
        }
        if let Some(l) = labels[r] {
            total += denom.ln() - f64::from(z[l] - zmax);
        }
    }
    if kept > 0 {
        total /= kept as f64;
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        "softmax_cross_entropy",
        vec![1],
        vec![total as f32],
        vec![logits.clone()],
        move |g| {
            let mut gx = vec![0.0f32; rows * classes];
            if kept > 0 {
                let scale = g[0] / kept as f32;
                for (r, label) in labels.iter().enumerate() {
                    let Some(l) = *label else { continue };
                    for k in 0..classes {
                        let onehot = if k == l { 1.0 } else { 0.0 };
                        gx[r * classes + k] = scale * (probs[r * classes + k] - onehot);
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}
