use super::autograd::{expect_rank4, Tensor};
use crate::error::{Error, Result};

/// A region on one batch item of a feature map, in feature-map pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Roi {
    pub batch: usize,
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

struct Tap {
    idx: [usize; 4],
    wt: [f32; 4],
}

fn bilinear_tap(y: f32, x: f32, h: usize, w: usize) -> Tap {
    let y = y.clamp(0.0, (h - 1) as f32);
    let x = x.clamp(0.0, (w - 1) as f32);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (dy, dx) = (y - y0 as f32, x - x0 as f32);
    Tap {
        idx: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
        wt: [
            (1.0 - dy) * (1.0 - dx),
            (1.0 - dy) * dx,
            dy * (1.0 - dx),
            dy * dx,
        ],
    }
}

/// Crops every region out of `features[N,C,H,W]` and bilinearly resamples it
/// to `out × out`, one sample per bin centre. Output is `[R,C,out,out]`.
pub fn roi_crop_resize(features: &Tensor, rois: &[Roi], out: usize) -> Result<Tensor> {
    let [n, c, h, w] = expect_rank4(features, "roi_crop_resize")?;
    if rois.is_empty() || out == 0 {
        return Err(Error::Contract("roi_crop_resize needs at least one region and out > 0".into()));
    }
    if let Some(r) = rois.iter().find(|r| r.batch >= n) {
        return Err(Error::Dimension(format!(
            "roi batch index {} out of range for {:?}",
            r.batch,
            features.shape()
        )));
    }
    let plane = h * w;
    let bins = out * out;
    let mut taps = Vec::with_capacity(rois.len() * bins);
    for r in rois {
        let bw = (r.x2 - r.x1) / out as f32;
        let bh = (r.y2 - r.y1) / out as f32;
        for i in 0..out {
            for j in 0..out {
                let sy = r.y1 + (i as f32 + 0.5) * bh - 0.5;
                let sx = r.x1 + (j as f32 + 0.5) * bw - 0.5;
                taps.push(bilinear_tap(sy, sx, h, w));
            }
        }
    }
    let x = features.data();
    let mut data = vec![0.0f32; rois.len() * c * bins];
    for (ri, r) in rois.iter().enumerate() {
        for ch in 0..c {
            let src = &x[(r.batch * c + ch) * plane..(r.batch * c + ch + 1) * plane];
            let dst = &mut data[(ri * c + ch) * bins..(ri * c + ch + 1) * bins];
            for (b, v) in dst.iter_mut().enumerate() {
                let t = &taps[ri * bins + b];
                *v = (0..4).map(|k| t.wt[k] * src[t.idx[k]]).sum();
            }
        }
    }
    let batches: Vec<usize> = rois.iter().map(|r| r.batch).collect();
    let len = features.numel();
    Ok(Tensor::from_op(
        "roi_crop_resize",
        vec![rois.len(), c, out, out],
        data,
        vec![features.clone()],
        move |g| {
            let mut gx = vec![0.0f32; len];
            for (ri, &bi) in batches.iter().enumerate() {
                for ch in 0..c {
                    let dst = &mut gx[(bi * c + ch) * plane..(bi * c + ch + 1) * plane];
                    let src = &g[(ri * c + ch) * bins..(ri * c + ch + 1) * bins];
                    for (b, &gv) in src.iter().enumerate() {
                        let t = &taps[ri * bins + b];
                        for k in 0..4 {
                            dst[t.idx[k]] += t.wt[k] * gv;
                        }
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}
