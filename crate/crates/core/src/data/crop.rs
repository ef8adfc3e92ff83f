//! Fixed-size square crops around a box and their inverse.

use serde::{Deserialize, Serialize};

use super::resample::{chw, resize_bilinear, resize_nearest};
use crate::detector::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps source pixel `x` to crop pixel `(x − source_box.x1)·scale + pad_left`
/// (and likewise for `y`). The scaled content occupies
/// `content_width × content_height` starting at the pads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    /// Integer-aligned region of the original image.
    pub source_box: BBox,
    pub scale: f32,
    pub pad_left: usize,
    pub pad_top: usize,
    pub target_size: usize,
    pub content_width: usize,
    pub content_height: usize,
}

impl CropTransform {
    /// Snaps `bbox` outward to whole pixels inside a `height × width`
    /// image and works out scale and padding.
    pub fn new(bbox: &BBox, height: usize, width: usize, target_size: usize) -> Result<Self> {
        if target_size == 0 {
            return Err(Error::Config("target size must be positive".into()));
        }
        let b = bbox.clip(width as f32, height as f32);
        let (x1, y1) = (b.x1.floor(), b.y1.floor());
        let (x2, y2) = (b.x2.ceil(), b.y2.ceil());
        if !(x2 > x1 && y2 > y1) || !bbox.x1.is_finite() || !bbox.y1.is_finite() {
            return Err(Error::DegenerateBox(format!("{bbox:?} has no area inside a {height}x{width} image")));
        }
        let (w, h) = ((x2 - x1) as usize, (y2 - y1) as usize);
        let (scale, cw, ch) = if w <= target_size && h <= target_size {
            (1.0, w, h)
        } else {
            let s = target_size as f64 / w.max(h) as f64;
            let fit = |v: usize| ((v as f64 * s).round() as usize).clamp(1, target_size);
            (s as f32, fit(w), fit(h))
        };
        Ok(Self {
            source_box: BBox::new(x1, y1, x2, y2),
            scale,
            pad_left: (target_size - cw) / 2,
            pad_top: (target_size - ch) / 2,
            target_size,
            content_width: cw,
            content_height: ch,
        })
    }

    fn source_size(&self) -> (usize, usize) {
        (self.source_box.width() as usize, self.source_box.height() as usize)
    }

    pub fn forward_point(&self, x: f32, y: f32) -> (f32, f32) {
        (
            (x - self.source_box.x1) * self.scale + self.pad_left as f32,
            (y - self.source_box.y1) * self.scale + self.pad_top as f32,
        )
    }

    pub fn inverse_point(&self, u: f32, v: f32) -> (f32, f32) {
        (
            (u - self.pad_left as f32) / self.scale + self.source_box.x1,
            (v - self.pad_top as f32) / self.scale + self.source_box.y1,
        )
    }

    /// Crops and pads any `[C,H,W]` tensor with this transform.
    pub fn apply(&self, t: &Tensor, nearest: bool) -> Result<Tensor> {
        let [c, h, w] = chw(t, "crop")?;
        let b = self.source_box;
        if b.x2 > w as f32 || b.y2 > h as f32 {
            return Err(Error::Dimension(format!("crop box {b:?} exceeds a {h}x{w} image")));
        }
        let (sw, sh) = self.source_size();
        let (x0, y0) = (b.x1 as usize, b.y1 as usize);
        let mut region = Vec::with_capacity(c * sw * sh);
        for plane in t.data().chunks_exact(h * w) {
            for i in y0..y0 + sh {
                region.extend_from_slice(&plane[i * w + x0..i * w + x0 + sw]);
            }
        }
        let mut region = Tensor::new(&[c, sh, sw], region)?;
        if (self.content_width, self.content_height) != (sw, sh) {
            region = if nearest {
                resize_nearest(&region, self.content_height, self.content_width)?
            } else {
                resize_bilinear(&region, self.content_height, self.content_width)?
            };
        }
        let ts = self.target_size;
        let mut out = vec![0.0f32; c * ts * ts];
        let (cw, ch) = (self.content_width, self.content_height);
        for (k, plane) in region.data().chunks_exact(cw * ch).enumerate() {
            for i in 0..ch {
                let dst = (k * ts + self.pad_top + i) * ts + self.pad_left;
                out[dst..dst + cw].copy_from_slice(&plane[i * cw..(i + 1) * cw]);
            }
        }
        Tensor::new(&[c, ts, ts], out)
    }
}

/// Crops `bbox` out of `image` `[3,H,W]`, padding with zeros to a
/// `target_size` square, or first scaling down so the longer side fits.
pub fn crop_and_normalize(image: &Tensor, bbox: &BBox, target_size: usize) -> Result<(Tensor, CropTransform)> {
    let [_, h, w] = chw(image, "crop_and_normalize")?;
    let tf = CropTransform::new(bbox, h, w, target_size)?;
    Ok((tf.apply(image, false)?, tf))
}

/// Nearest-neighbour crop of a mask with an existing transform.
pub fn crop_mask(mask: &Tensor, transform: &CropTransform) -> Result<Tensor> {
    transform.apply(mask, true)
}

/// Places a `[1,T,T]` crop-space mask back onto an `original_h × original_w`
/// zero canvas.
pub fn restore_mask(crop_mask: &Tensor, transform: &CropTransform, original_h: usize, original_w: usize) -> Result<Tensor> {
    let ts = transform.target_size;
    let [c, h, w] = chw(crop_mask, "restore_mask")?;
    if (h, w) != (ts, ts) {
        return Err(Error::Dimension(format!("crop mask is {h}x{w}, transform expects {ts}x{ts}")));
    }
    let b = transform.source_box;
    if b.x2 > original_w as f32 || b.y2 > original_h as f32 || b.x1 < 0.0 || b.y1 < 0.0 {
        return Err(Error::Dimension(format!(
            "source box {b:?} does not fit a {original_h}x{original_w} image"
        )));
    }
    let (cw, ch) = (transform.content_width, transform.content_height);
    if transform.pad_left + cw > ts || transform.pad_top + ch > ts {
        return Err(Error::Dimension(format!("transform content {cw}x{ch} overflows {ts}x{ts}")));
    }
    let mut content = Vec::with_capacity(c * cw * ch);
    for plane in crop_mask.data().chunks_exact(ts * ts) {
        for i in 0..ch {
            let s = (transform.pad_top + i) * ts + transform.pad_left;
            content.extend_from_slice(&plane[s..s + cw]);
        }
    }
    let mut content = Tensor::new(&[c, ch, cw], content)?;
    let (sw, sh) = transform.source_size();
    if (sw, sh) != (cw, ch) {
        content = resize_nearest(&content, sh, sw)?;
    }
    let (x0, y0) = (b.x1 as usize, b.y1 as usize);
    let mut out = vec![0.0f32; c * original_h * original_w];
    for (k, plane) in content.data().chunks_exact(sw * sh).enumerate() {
        for i in 0..sh {
            let dst = (k * original_h + y0 + i) * original_w + x0;
            out[dst..dst + sw].copy_from_slice(&plane[i * sw..(i + 1) * sw]);
        }
    }
    Tensor::new(&[c, original_h, original_w], out)
}
