//! Resampling of `[C,H,W]` images. Pixel centres sit at half-integer
//! coordinates in both grids.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn chw(t: &Tensor, what: &str) -> Result<[usize; 3]> {
    match *t.shape() {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Dimension(format!("{what}: expected [C,H,W], got {:?}", t.shape()))),
    }
}

/// Bilinear value at continuous pixel coordinate `(y, x)` of one plane,
/// `fill` outside the image.
pub(crate) fn sample_bilinear(plane: &[f32], h: usize, w: usize, y: f32, x: f32, fill: f32) -> f32 {
    if !(y > -1.0 && y < h as f32 && x > -1.0 && x < w as f32) {
        return fill;
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (dy, dx) = (y - y0, x - x0);
    let at = |yy: f32, xx: f32| -> f32 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f32 || xx >= w as f32 {
            fill
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    (1.0 - dy) * ((1.0 - dx) * at(y0, x0) + dx * at(y0, x0 + 1.0))
        + dy * ((1.0 - dx) * at(y0 + 1.0, x0) + dx * at(y0 + 1.0, x0 + 1.0))
}

/// Nearest value at continuous pixel coordinate `(y, x)`, `fill` outside.
pub(crate) fn sample_nearest(plane: &[f32], h: usize, w: usize, y: f32, x: f32, fill: f32) -> f32 {
    let (yy, xx) = ((y + 0.5).floor(), (x + 0.5).floor());
    if yy < 0.0 || xx < 0.0 || yy >= h as f32 || xx >= w as f32 {
        fill
    } else {
        plane[yy as usize * w + xx as usize]
    }
}

fn resize_with(
    t: &Tensor,
    out_h: usize,
    out_w: usize,
    sampler: fn(&[f32], usize, usize, f32, f32, f32) -> f32,
) -> Result<Tensor> {
    let [c, h, w] = chw(t, "resize")?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::Dimension(format!("cannot resize {h}x{w} to {out_h}x{out_w}")));
    }
    let (sy, sx) = (h as f32 / out_h as f32, w as f32 / out_w as f32);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in t.data().chunks_exact(h * w) {
        for i in 0..out_h {
            // clamp keeps edge pixels from blending with the fill value
            let y = ((i as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
            for j in 0..out_w {
                let x = ((j as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
                out.push(sampler(plane, h, w, y, x, 0.0));
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    resize_with(t, out_h, out_w, sample_bilinear)
}

/// Nearest-neighbour resize; keeps binary masks binary.
pub fn resize_nearest(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [_, h, w] = chw(t, "resize")?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::Dimension(format!("cannot resize {h}x{w} to {out_h}x{out_w}")));
    }
    let rows: Vec<usize> = (0..out_h).map(|i| (((i as f64 + 0.5) * h as f64 / out_h as f64) as usize).min(h - 1)).collect();
    let cols: Vec<usize> = (0..out_w).map(|j| (((j as f64 + 0.5) * w as f64 / out_w as f64) as usize).min(w - 1)).collect();
    let mut out = Vec::with_capacity(t.numel() / (h * w) * out_h * out_w);
    for plane in t.data().chunks_exact(h * w) {
        for &r in &rows {
            out.extend(cols.iter().map(|&c| plane[r * w + c]));
        }
    }
    Tensor::new(&[t.shape()[0], out_h, out_w], out)
}
